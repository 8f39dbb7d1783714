"""Canned-response chat-completion server for offline runs and tests.

Canned file layout::

    {
      "format_version": 1,
      "routes": [
        {"match": "substring of the request messages", "responses": ["...", {"status": 500}, "..."]}
      ],
      "default": "{\\"boundary_indices\\": []}"
    }

A request is routed to the first route whose ``match`` occurs in the
concatenated message contents. Each route replays its ``responses`` in
order and then repeats the last one. A response is either completion text or
``{"status": code}`` for an HTTP error.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path


class MockChatServer:
    def __init__(self, canned: dict | str | Path, host: str = "127.0.0.1", port: int = 0):
        if not isinstance(canned, dict):
            canned = json.loads(Path(canned).read_text(encoding="utf-8"))
        self.routes = canned.get("routes", [])
        self.default = canned.get("default")
        self.requests: list[dict] = []
        self._cursor = [0] * len(self.routes)
        self._lock = threading.Lock()
        self._server = ThreadingHTTPServer((host, port), self._handler())
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1/chat/completions"

    def _next_response(self, prompt: str):
        with self._lock:
            for i, route in enumerate(self.routes):
                if route["match"] in prompt:
                    responses = route["responses"]
                    resp = responses[min(self._cursor[i], len(responses) - 1)]
                    self._cursor[i] += 1
                    return resp
        return self.default

    def _handler(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length) or b"{}")
                except ValueError:
                    self._send(400, {"error": "bad json"})
                    return
                messages = body.get("messages", [])
                prompt = "\n".join(str(m.get("content", "")) for m in messages if isinstance(m, dict))
                with server._lock:
                    server.requests.append({"body": body, "authorization": self.headers.get("Authorization")})
                resp = server._next_response(prompt)
                if resp is None:
                    self._send(404, {"error": "no canned response"})
                elif isinstance(resp, dict):
                    self._send(int(resp.get("status", 500)), {"error": "canned failure"})
                else:
                    self._send(200, {
                        "model": body.get("model"),
                        "choices": [{"index": 0, "message": {"role": "assistant", "content": resp}}],
                    })

            def _send(self, status, payload):
                blob = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(blob)))
                self.end_headers()
                self.wfile.write(blob)

        return Handler

    def start(self) -> "MockChatServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
