"""Wire-protocol server: one JSON object per line.

Requests:  {"op": "identity"}
           {"op": "token_logprobs", "items": [{"image": PATH|"null", "text": STR}, ...]}
Responses: {"identity": {...}}
           {"items": [{"tokens": [...], "logp": [...]}, ...]} aligned 1:1
           {"error": "<message>"} on any unanswerable request (never a
           partial or truncated item list)

Transports: stdin/stdout (default) or HTTP POST (--http); both speak the
identical protocol.  One batch is in flight at a time per process; the
engine's client provides pipelining.
"""

from __future__ import annotations

import json
import sys
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .model import AdapterError, CaptioningScorer


def handle_request(scorer: CaptioningScorer, message: dict) -> dict:
    op = message.get("op")
    if op == "identity":
        return {"identity": scorer.identity}
    if op != "token_logprobs":
        return {"error": f"unknown op {op!r}"}
    items = message.get("items")
    if not isinstance(items, list) or not items:
        return {"error": "items must be a non-empty list"}
    out = []
    for i, item in enumerate(items):
        if not isinstance(item, dict) or "image" not in item or "text" not in item:
            return {"error": f"item {i}: need 'image' and 'text'"}
        try:
            tokens, logp = scorer.token_logprobs(str(item["image"]), str(item["text"]))
        except AdapterError as exc:
            return {"error": f"item {i}: {exc}"}
        out.append({"tokens": tokens, "logp": logp})
    return {"items": out}


def _serialize(response: dict) -> str:
    return json.dumps(response, sort_keys=True, separators=(",", ":"), allow_nan=False)


def serve_stdio(scorer: CaptioningScorer) -> None:
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            message = json.loads(line)
            if not isinstance(message, dict):
                message = {}
        except json.JSONDecodeError:
            message = {}
        print(_serialize(handle_request(scorer, message)), flush=True)


def serve_http(scorer: CaptioningScorer, port: int) -> None:
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):  # noqa: N802 (stdlib naming)
            length = int(self.headers.get("Content-Length", "0"))
            body = self.rfile.read(length).decode("utf-8").strip()
            try:
                message = json.loads(body)
                if not isinstance(message, dict):
                    message = {}
            except json.JSONDecodeError:
                message = {}
            payload = (_serialize(handle_request(scorer, message)) + "\n").encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", port), Handler)
    print(f"massrank-adapter listening on http://127.0.0.1:{server.server_port}", flush=True)
    server.serve_forever()
