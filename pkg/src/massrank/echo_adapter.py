"""Reference adapter fixture for protocol tests and demos.

Speaks the full wire protocol without any model behind it: captions are
whitespace-tokenized and each token gets a deterministic pseudo
log-probability derived from a hash of (image id, text, position):

    logp[i] = -(1 + (sha256(f"{image}|{text}|{i}") % 997) / 1000)

so values lie in [-1.997, -1.001] and identical requests always produce
identical responses.  This fixed mapping is the fixture contract that the
client tests assert against.

Failure injection for negative tests (``--fail-mode``):

* ``misalign``      -- drop the last response item;
* ``positive-logp`` -- emit a logp of +0.5;
* ``garbage``       -- reply with a non-JSON line;
* ``error``         -- reply with a protocol {"error": ...} object.

``--delay`` sleeps before each reply (timeout tests).  ``--http PORT``
serves the same protocol over HTTP POST instead of stdin/stdout.

Run as ``python -m massrank.echo_adapter``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

IDENTITY = {
    "model": "echo-adapter-v1",
    "preprocessing": "none (ids are treated as opaque strings)",
    "tokenizer": "whitespace",
    "null_image": {"resolution": [224, 224], "fill": 0},
}

FAIL_MODES = ("none", "misalign", "positive-logp", "garbage", "error")


def token_logprob(image: str, text: str, position: int) -> float:
    digest = hashlib.sha256(f"{image}|{text}|{position}".encode("utf-8")).digest()
    return -(1.0 + (int.from_bytes(digest[:4], "big") % 997) / 1000.0)


def echo_item(image: str, text: str) -> dict:
    tokens = text.split()
    return {
        "tokens": tokens,
        "logp": [token_logprob(image, text, i) for i in range(len(tokens))],
    }


def handle_request(message: dict, fail_mode: str = "none") -> dict | str:
    """Build the response object (or raw string for garbage mode)."""
    if fail_mode == "garbage":
        return "this is not json {"
    if fail_mode == "error":
        return {"error": "injected failure"}
    op = message.get("op")
    if op == "identity":
        return {"identity": IDENTITY}
    if op != "token_logprobs":
        return {"error": f"unknown op {op!r}"}
    items = message.get("items")
    if not isinstance(items, list) or not items:
        return {"error": "items must be a non-empty list"}
    out = []
    for item in items:
        if not isinstance(item, dict) or "image" not in item or "text" not in item:
            return {"error": "each item needs 'image' and 'text'"}
        if not isinstance(item["text"], str) or not item["text"].strip():
            return {"error": "text must be a non-empty string"}
        out.append(echo_item(item["image"], item["text"]))
    if fail_mode == "misalign" and out:
        out = out[:-1]
    if fail_mode == "positive-logp" and out:
        out[0]["logp"][0] = 0.5
    return {"items": out}


def _serialize(response: dict | str) -> str:
    if isinstance(response, str):
        return response
    return json.dumps(response, sort_keys=True, separators=(",", ":"))


def run_stdio(fail_mode: str, delay: float) -> None:
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            message = json.loads(line)
        except json.JSONDecodeError:
            message = {}
        if delay:
            time.sleep(delay)
        print(_serialize(handle_request(message, fail_mode)), flush=True)


def run_http(port: int, fail_mode: str, delay: float) -> None:
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):  # noqa: N802 (stdlib naming)
            length = int(self.headers.get("Content-Length", "0"))
            body = self.rfile.read(length).decode("utf-8").strip()
            try:
                message = json.loads(body)
            except json.JSONDecodeError:
                message = {}
            if delay:
                time.sleep(delay)
            payload = (_serialize(handle_request(message, fail_mode)) + "\n").encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, *args):  # keep test output clean
            pass

    server = ThreadingHTTPServer(("127.0.0.1", port), Handler)
    print(f"echo-adapter listening on http://127.0.0.1:{server.server_port}", flush=True)
    server.serve_forever()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--http", type=int, default=None, metavar="PORT",
                        help="serve over HTTP instead of stdin/stdout (0 picks a free port)")
    parser.add_argument("--fail-mode", choices=FAIL_MODES, default="none")
    parser.add_argument("--delay", type=float, default=0.0)
    args = parser.parse_args(argv)
    if args.http is not None:
        run_http(args.http, args.fail_mode, args.delay)
    else:
        run_stdio(args.fail_mode, args.delay)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
