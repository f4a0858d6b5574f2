import subprocess
import sys
import time

import pytest

from massrank import (
    AdapterClient,
    AdapterProtocolError,
    AdapterTimeoutError,
    InvalidInputError,
)
from massrank.echo_adapter import IDENTITY, echo_item

ECHO = f"proc:{sys.executable} -m massrank.echo_adapter"


def echo_client(extra: str = "", **kwargs) -> AdapterClient:
    return AdapterClient(ECHO + extra, timeout=10.0, retries=0, **kwargs)


@pytest.fixture(scope="module")
def http_echo():
    proc = subprocess.Popen(
        [sys.executable, "-m", "massrank.echo_adapter", "--http", "0"],
        stdout=subprocess.PIPE,
        text=True,
    )
    try:
        line = proc.stdout.readline()
        url = line.strip().rsplit(" ", 1)[-1]
        yield url
    finally:
        proc.terminate()
        proc.wait(timeout=5)


class TestProcTransport:
    def test_identity(self):
        with echo_client() as client:
            assert client.identity() == IDENTITY
            digest = client.identity_digest()
            assert len(digest) == 64

    def test_fixture_contract_single_batch(self):
        with echo_client() as client:
            [got] = client.token_logprobs([{"image": "null", "text": "a tiny cat"}])
        want = echo_item("null", "a tiny cat")
        assert got == want
        assert got["tokens"] == ["a", "tiny", "cat"]
        assert all(lp <= 0 for lp in got["logp"])

    def test_cache_serves_repeats_with_zero_calls(self):
        with echo_client() as client:
            batch = [{"image": "null", "text": "two dogs"}]
            first = client.token_logprobs(batch)
            calls_after_first = client.calls
            second = client.token_logprobs(batch)
            assert client.calls == calls_after_first
            assert first == second

    def test_partial_cache_hit_sends_only_missing(self):
        with echo_client() as client:
            client.token_logprobs([{"image": "null", "text": "alpha"}])
            assert client.calls == 1
            got = client.token_logprobs(
                [{"image": "null", "text": "alpha"}, {"image": "null", "text": "beta"}]
            )
            assert client.calls == 2
            assert got[0] == echo_item("null", "alpha")
            assert got[1] == echo_item("null", "beta")

    def test_cache_keyed_on_image_content(self, tmp_path):
        img_a = tmp_path / "a.png"
        img_b = tmp_path / "b.png"
        img_a.write_bytes(b"AAAA")
        img_b.write_bytes(b"AAAA")  # same bytes, different path: same key
        with echo_client() as client:
            client.token_logprobs([{"image": str(img_a), "text": "x"}])
            calls = client.calls
            client.token_logprobs([{"image": str(img_b), "text": "x"}])
            assert client.calls == calls

    def test_misaligned_response_is_protocol_error(self):
        with echo_client(" --fail-mode misalign") as client:
            with pytest.raises(AdapterProtocolError, match="items"):
                client.token_logprobs(
                    [{"image": "null", "text": "a"}, {"image": "null", "text": "b"}]
                )

    def test_positive_logp_is_protocol_error(self):
        with echo_client(" --fail-mode positive-logp") as client:
            with pytest.raises(AdapterProtocolError, match="logp"):
                client.token_logprobs([{"image": "null", "text": "a"}])

    def test_garbage_is_protocol_error(self):
        with echo_client(" --fail-mode garbage") as client:
            with pytest.raises(AdapterProtocolError, match="JSON"):
                client.identity()

    def test_error_object_is_protocol_error(self):
        with echo_client(" --fail-mode error") as client:
            with pytest.raises(AdapterProtocolError, match="injected"):
                client.token_logprobs([{"image": "null", "text": "a"}])

    def test_slow_adapter_times_out(self):
        client = AdapterClient(ECHO + " --delay 5", timeout=0.3, retries=0)
        started = time.monotonic()
        with pytest.raises(AdapterTimeoutError):
            client.token_logprobs([{"image": "null", "text": "a"}])
        assert time.monotonic() - started < 4.0
        client.close()

    def test_retries_then_fail(self):
        client = AdapterClient(ECHO + " --delay 5", timeout=0.2, retries=2, backoff=0.01)
        with pytest.raises(AdapterTimeoutError):
            client.token_logprobs([{"image": "null", "text": "a"}])
        client.close()

    def test_many_batches_preserve_order(self):
        batches = [[{"image": "null", "text": f"text number {i}"}] for i in range(12)]
        with echo_client(max_in_flight=4) as client:
            results = client.token_logprobs_many(batches)
        for i, [got] in enumerate(results):
            assert got == echo_item("null", f"text number {i}")

    def test_bad_items_rejected_client_side(self):
        with echo_client() as client:
            with pytest.raises(InvalidInputError):
                client.token_logprobs([])
            with pytest.raises(InvalidInputError):
                client.token_logprobs([{"image": "null"}])
            with pytest.raises(InvalidInputError):
                client.token_logprobs([{"image": "/no/such/file.png", "text": "x"}])


class TestHttpTransport:
    def test_identity_and_batch(self, http_echo):
        with AdapterClient(http_echo, timeout=5.0, retries=0) as client:
            assert client.identity() == IDENTITY
            [got] = client.token_logprobs([{"image": "null", "text": "hello world"}])
            assert got == echo_item("null", "hello world")

    def test_many_batches(self, http_echo):
        batches = [[{"image": "null", "text": f"t{i}"}] for i in range(8)]
        with AdapterClient(http_echo, timeout=5.0, retries=0, max_in_flight=3) as client:
            results = client.token_logprobs_many(batches)
        for i, [got] in enumerate(results):
            assert got == echo_item("null", f"t{i}")

    def test_unreachable_endpoint(self):
        client = AdapterClient("http://127.0.0.1:1/void", timeout=0.5, retries=0)
        with pytest.raises(AdapterTimeoutError):
            client.identity()
        client.close()

    def test_cross_transport_identity_digest_matches(self, http_echo):
        with echo_client() as proc_client, AdapterClient(http_echo, timeout=5.0) as http_client:
            assert proc_client.identity_digest() == http_client.identity_digest()
