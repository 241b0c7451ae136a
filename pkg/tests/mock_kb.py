"""Local scripted KB server for retrieval tests; never touches the internet."""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse


class MockKB:
    """HTTP server answering /rw and /rd with per-query scripted behaviors.

    A behavior is a dict with any of: items (list of {word, score}), status,
    delay (seconds), raw (bytes body). Behaviors registered as a sequence are
    consumed one per request; the last one repeats.
    """

    def __init__(self):
        self._behaviors: dict[tuple[str, str], list[dict]] = {}
        self._calls: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()
        mock = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_GET(self):
                parsed = urlparse(self.path)
                source = parsed.path.strip("/")
                query = parse_qs(parsed.query).get("query", [""])[0]
                behavior = mock._next_behavior(source, query)
                if behavior.get("delay"):
                    time.sleep(behavior["delay"])
                status = behavior.get("status", 200)
                if "raw" in behavior:
                    body = behavior["raw"]
                else:
                    body = json.dumps(behavior.get("items", [])).encode("utf-8")
                try:
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(body)))
                    self.end_headers()
                    self.wfile.write(body)
                except (BrokenPipeError, ConnectionResetError):
                    pass  # client gave up (timeout test)

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def _next_behavior(self, source: str, query: str) -> dict:
        with self._lock:
            key = (source, query)
            self._calls[key] = self._calls.get(key, 0) + 1
            behaviors = self._behaviors.get(key)
            if not behaviors:
                return {"items": []}
            if len(behaviors) > 1:
                return behaviors.pop(0)
            return behaviors[0]

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def url(self, source: str) -> str:
        return f"http://127.0.0.1:{self.port}/{source}"

    def script(self, source: str, query: str, *behaviors: dict) -> None:
        with self._lock:
            self._behaviors[(source, query)] = list(behaviors)

    def set_items(self, source: str, query: str, items: list[dict]) -> None:
        self.script(source, query, {"items": items})

    def calls(self, source: str, query: str) -> int:
        with self._lock:
            return self._calls.get((source, query), 0)

    def total_calls(self) -> int:
        with self._lock:
            return sum(self._calls.values())

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()
