"""Client for the adapter wire protocol.

Adapters turn (image, text) items into per-token log-probabilities.  The
protocol is one JSON object per line over a byte stream:

    request  {"op": "token_logprobs", "items": [{"image": <path or "null">,
               "text": <string>}, ...]}
    response {"items": [{"tokens": [...], "logp": [...]}, ...]}
             or {"error": "<message>"}

    request  {"op": "identity"}
    response {"identity": {"model": ..., "preprocessing": ...,
               "tokenizer": ..., "null_image": {...}}}

Two transports speak the identical protocol: a child process addressed as
``proc:<command line>`` (objects over stdin/stdout) and HTTP POST
addressed as ``http(s)://...`` (one object per request body, one per
response body).

Responses must align 1:1 with request items; violations raise
AdapterProtocolError carrying the raw message.  Transient failures
(timeouts, dead connections) are retried with exponential backoff up to a
configured limit.  Successful item responses are cached keyed on
(adapter identity digest, image content digest or "null", text), so
repeating a request performs zero adapter calls.
"""

from __future__ import annotations

import hashlib
import json
import queue
import shlex
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import requests

from .dataio import NULL_IMAGE_ID, dump_json_line, sha256_file
from .errors import AdapterProtocolError, AdapterTimeoutError, InvalidInputError
from .similarity import LOGP_TOLERANCE

DEFAULT_TIMEOUT = 30.0
DEFAULT_RETRIES = 3
DEFAULT_BACKOFF = 0.25
DEFAULT_MAX_IN_FLIGHT = 4


def _validate_items(items) -> list[dict]:
    if not isinstance(items, list) or not items:
        raise InvalidInputError("batch must be a non-empty list of items")
    out = []
    for i, item in enumerate(items):
        if not isinstance(item, dict) or "image" not in item or "text" not in item:
            raise InvalidInputError(f"item {i}: need 'image' and 'text' fields")
        image, text = item["image"], item["text"]
        if not isinstance(image, str) or not image:
            raise InvalidInputError(f"item {i}: image must be a non-empty string")
        if image != NULL_IMAGE_ID and not Path(image).is_file():
            raise InvalidInputError(f"item {i}: image path {image!r} does not exist")
        if not isinstance(text, str) or not text:
            raise InvalidInputError(f"item {i}: text must be a non-empty string")
        out.append({"image": image, "text": text})
    return out


def _validate_response(message: dict, n_items: int) -> list[dict]:
    raw = dump_json_line(message)
    if "error" in message:
        raise AdapterProtocolError(f"adapter reported an error: {raw}")
    items = message.get("items")
    if not isinstance(items, list) or len(items) != n_items:
        raise AdapterProtocolError(
            f"response has {len(items) if isinstance(items, list) else 'no'} items, "
            f"expected {n_items}: {raw}"
        )
    for i, item in enumerate(items):
        if not isinstance(item, dict):
            raise AdapterProtocolError(f"response item {i} is not an object: {raw}")
        tokens, logp = item.get("tokens"), item.get("logp")
        if not isinstance(tokens, list) or not tokens or not all(
            isinstance(t, str) and t for t in tokens
        ):
            raise AdapterProtocolError(f"response item {i}: bad 'tokens' field: {raw}")
        if not isinstance(logp, list) or len(logp) != len(tokens):
            raise AdapterProtocolError(f"response item {i}: 'logp' misaligned with tokens: {raw}")
        for x in logp:
            if isinstance(x, bool) or not isinstance(x, (int, float)):
                raise AdapterProtocolError(f"response item {i}: non-numeric logp: {raw}")
            if x != x or x in (float("inf"), float("-inf")) or x > LOGP_TOLERANCE:
                raise AdapterProtocolError(
                    f"response item {i}: logp {x!r} violates the log-probability bound: {raw}"
                )
    return [{"tokens": list(it["tokens"]), "logp": [float(x) for x in it["logp"]]} for it in items]


class _ProcTransport:
    """Line protocol over a child process; restartable on failure."""

    def __init__(self, command: str, timeout: float):
        self.command = shlex.split(command)
        if not self.command:
            raise InvalidInputError("empty proc: adapter command")
        self.timeout = timeout
        self.proc: subprocess.Popen | None = None
        self.lines: queue.Queue = queue.Queue()

    def _ensure_started(self) -> None:
        if self.proc is not None and self.proc.poll() is None:
            return
        self.proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self.lines = queue.Queue()
        thread = threading.Thread(target=self._pump, args=(self.proc, self.lines), daemon=True)
        thread.start()

    @staticmethod
    def _pump(proc: subprocess.Popen, out: queue.Queue) -> None:
        assert proc.stdout is not None
        for line in proc.stdout:
            out.put(line)
        out.put(None)  # EOF sentinel

    def round_trip(self, payload: dict) -> dict:
        self._ensure_started()
        assert self.proc is not None and self.proc.stdin is not None
        try:
            self.proc.stdin.write(dump_json_line(payload) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise AdapterTimeoutError(f"adapter process is gone: {exc}") from None
        return self.read_response()

    def send(self, payload: dict) -> None:
        self._ensure_started()
        assert self.proc is not None and self.proc.stdin is not None
        try:
            self.proc.stdin.write(dump_json_line(payload) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise AdapterTimeoutError(f"adapter process is gone: {exc}") from None

    def read_response(self) -> dict:
        try:
            line = self.lines.get(timeout=self.timeout)
        except queue.Empty:
            self.close()
            raise AdapterTimeoutError(
                f"no response within {self.timeout}s from {' '.join(self.command)}"
            ) from None
        if line is None:
            self.close()
            raise AdapterTimeoutError("adapter process closed its output stream")
        try:
            message = json.loads(line)
        except json.JSONDecodeError:
            raise AdapterProtocolError(f"adapter sent invalid JSON: {line!r}") from None
        if not isinstance(message, dict):
            raise AdapterProtocolError(f"adapter response is not an object: {line!r}")
        return message

    def close(self) -> None:
        if self.proc is not None and self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self.proc.kill()
        self.proc = None


class _HttpTransport:
    def __init__(self, url: str, timeout: float):
        self.url = url
        self.timeout = timeout
        self.session = requests.Session()

    def round_trip(self, payload: dict) -> dict:
        try:
            response = self.session.post(
                self.url,
                data=(dump_json_line(payload) + "\n").encode("utf-8"),
                headers={"Content-Type": "application/json"},
                timeout=self.timeout,
            )
        except requests.Timeout as exc:
            raise AdapterTimeoutError(f"no response within {self.timeout}s from {self.url}") from exc
        except requests.ConnectionError as exc:
            raise AdapterTimeoutError(f"cannot reach adapter at {self.url}: {exc}") from exc
        body = response.text.strip()
        try:
            message = json.loads(body)
        except json.JSONDecodeError:
            raise AdapterProtocolError(f"adapter sent invalid JSON: {body!r}") from None
        if not isinstance(message, dict):
            raise AdapterProtocolError(f"adapter response is not an object: {body!r}")
        return message

    def close(self) -> None:
        self.session.close()


class AdapterClient:
    """Caching, retrying client over either transport.

    ``calls`` counts token_logprobs round trips actually sent to the
    adapter (cache hits send nothing).
    """

    def __init__(
        self,
        endpoint: str,
        *,
        timeout: float = DEFAULT_TIMEOUT,
        retries: int = DEFAULT_RETRIES,
        backoff: float = DEFAULT_BACKOFF,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        use_cache: bool = True,
    ):
        if endpoint.startswith("proc:"):
            self.transport = _ProcTransport(endpoint[len("proc:"):], timeout)
            self._pipelined = True
        elif endpoint.startswith(("http://", "https://")):
            self.transport = _HttpTransport(endpoint, timeout)
            self._pipelined = False
        else:
            raise InvalidInputError(
                f"endpoint {endpoint!r} must start with 'proc:', 'http://', or 'https://'"
            )
        self.endpoint = endpoint
        self.retries = retries
        self.backoff = backoff
        self.max_in_flight = max(1, max_in_flight)
        self.use_cache = use_cache
        self.calls = 0
        self._identity: dict | None = None
        self._cache: dict[tuple[str, str, str], dict] = {}
        self._file_digests: dict[str, str] = {}

    # -- plumbing ----------------------------------------------------------

    def _round_trip(self, payload: dict) -> dict:
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                return self.transport.round_trip(payload)
            except AdapterTimeoutError as exc:
                last = exc
        assert last is not None
        raise last

    def identity(self) -> dict:
        if self._identity is None:
            message = self._round_trip({"op": "identity"})
            identity = message.get("identity")
            if not isinstance(identity, dict) or not identity:
                raise AdapterProtocolError(
                    f"bad identity response: {dump_json_line(message)}"
                )
            self._identity = identity
        return self._identity

    def identity_digest(self) -> str:
        return hashlib.sha256(dump_json_line(self.identity()).encode("utf-8")).hexdigest()

    def _item_key(self, item: dict) -> tuple[str, str, str]:
        image = item["image"]
        if image == NULL_IMAGE_ID:
            image_digest = NULL_IMAGE_ID
        else:
            if image not in self._file_digests:
                self._file_digests[image] = sha256_file(image)
            image_digest = self._file_digests[image]
        return (self.identity_digest(), image_digest, item["text"])

    # -- public api ---------------------------------------------------------

    def token_logprobs(self, items) -> list[dict]:
        """Per-token log-probs for a batch; order matches the input."""
        items = _validate_items(items)
        keys = [self._item_key(item) for item in items] if self.use_cache else None
        if keys is not None:
            missing = [i for i, key in enumerate(keys) if key not in self._cache]
        else:
            missing = list(range(len(items)))
        if missing:
            payload = {"op": "token_logprobs", "items": [items[i] for i in missing]}
            message = self._round_trip(payload)
            self.calls += 1
            fresh = _validate_response(message, len(missing))
            if keys is not None:
                for i, item_response in zip(missing, fresh):
                    self._cache[keys[i]] = item_response
            else:
                return fresh
        if keys is None:
            return []
        return [
            {"tokens": list(self._cache[key]["tokens"]), "logp": list(self._cache[key]["logp"])}
            for key in keys
        ]

    def token_logprobs_many(self, batches) -> list[list[dict]]:
        """Process several batches, preserving order in the output.

        The child-process transport pipelines up to ``max_in_flight``
        requests; HTTP fans out over a bounded thread pool.  Cached items
        never reach the wire.
        """
        batches = [_validate_items(batch) for batch in batches]
        if not self._pipelined:
            if self.max_in_flight == 1 or len(batches) == 1:
                return [self.token_logprobs(batch) for batch in batches]
            with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
                return list(pool.map(self.token_logprobs, batches))

        results: list[list[dict] | None] = [None] * len(batches)
        pending: list[tuple[int, list[int], list[tuple[str, str, str]] | None]] = []
        in_flight: list[tuple[int, list[int]]] = []

        def resolve_from_cache(index: int, batch) -> list[int]:
            if not self.use_cache:
                return list(range(len(batch)))
            keys = [self._item_key(item) for item in batch]
            return [i for i, key in enumerate(keys) if key not in self._cache]

        for index, batch in enumerate(batches):
            missing = resolve_from_cache(index, batch)
            if not missing:
                results[index] = self.token_logprobs(batch)  # pure cache assembly
            else:
                pending.append((index, missing, None))

        cursor = 0
        try:
            while cursor < len(pending) or in_flight:
                while cursor < len(pending) and len(in_flight) < self.max_in_flight:
                    index, missing, _ = pending[cursor]
                    payload = {
                        "op": "token_logprobs",
                        "items": [batches[index][i] for i in missing],
                    }
                    self.transport.send(payload)
                    self.calls += 1
                    in_flight.append((index, missing))
                    cursor += 1
                index, missing = in_flight.pop(0)
                message = self.transport.read_response()
                fresh = _validate_response(message, len(missing))
                if self.use_cache:
                    for i, item_response in zip(missing, fresh):
                        self._cache[self._item_key(batches[index][i])] = item_response
                    results[index] = self.token_logprobs(batches[index])
                else:
                    merged: list[dict | None] = [None] * len(batches[index])
                    for i, item_response in zip(missing, fresh):
                        merged[i] = item_response
                    results[index] = merged  # type: ignore[assignment]
        except AdapterTimeoutError:
            # The window is unrecoverable as a pipeline; retry what is left
            # sequentially (round_trip has its own backoff/retries).
            for index, missing in in_flight:
                results[index] = None
            for index, batch in enumerate(batches):
                if results[index] is None:
                    results[index] = self.token_logprobs(batch)
        assert all(r is not None for r in results)
        return results  # type: ignore[return-value]

    def close(self) -> None:
        self.transport.close()

    def __enter__(self) -> "AdapterClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
