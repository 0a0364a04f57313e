"""Deterministic in-process mock of the completions and embeddings
endpoints, used by the test suite and for offline CLI runs.

Logprobs and embedding vectors are pure functions of the request text
(derived from SHA-256 digests), so repeated runs are bit-identical.
"""

from __future__ import annotations

import hashlib
import json
import string
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


def _hash_unit(text: str) -> float:
    """Deterministic float in [0, 1) from text."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2 ** 64


def deterministic_logprobs(prompt: str, n_letters: int = 6) -> dict[str, float]:
    """Top-token table keyed by leading-space letter forms."""
    return {
        " " + letter: -0.5 - 4.0 * _hash_unit(prompt + "|" + letter)
        for letter in string.ascii_uppercase[:n_letters]
    }


def deterministic_embedding(text: str, dim: int = 16) -> list[float]:
    return [2.0 * _hash_unit(f"{text}|dim{i}") - 1.0 for i in range(dim)]


class _Handler(BaseHTTPRequestHandler):
    def log_message(self, *args):  # keep test output quiet
        pass

    def _send(self, payload: dict, status: int = 200) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path.endswith("/stats"):
            self._send(self.server.counters)
        else:
            self._send({"error": "not found"}, status=404)

    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        try:
            body = json.loads(self.rfile.read(length) or b"{}")
        except json.JSONDecodeError:
            self._send({"error": "bad json"}, status=400)
            return
        if self.path.endswith("/completions"):
            self.server.counters["completions"] += 1
            prompt = body.get("prompt", "")
            top = deterministic_logprobs(prompt)
            best = max(top, key=top.get)
            self._send({
                "choices": [{"text": best, "logprobs": {"top_logprobs": [top]}}],
            })
        elif self.path.endswith("/embeddings"):
            self.server.counters["embeddings"] += 1
            self._send({"vector": deterministic_embedding(body.get("input", ""))})
        else:
            self._send({"error": "not found"}, status=404)


class MockServer:
    """Context manager running the mock endpoints on a local port."""

    def __init__(self, port: int = 0):
        self._server = ThreadingHTTPServer(("127.0.0.1", port), _Handler)
        self._server.counters = {"completions": 0, "embeddings": 0}
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self._server.server_address[1]}"

    @property
    def counters(self) -> dict[str, int]:
        return dict(self._server.counters)

    def start(self) -> "MockServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
