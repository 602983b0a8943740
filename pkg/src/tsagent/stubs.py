"""Local HTTP stand-ins for a chat endpoint and a forecasting plugin.

Used by the test-suite and handy for wiring checks without a real model server.
"""
from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable


class _Handler(BaseHTTPRequestHandler):
    def log_message(self, *args):  # keep test output quiet
        pass

    def do_POST(self):
        n = int(self.headers.get("Content-Length") or 0)
        try:
            body = json.loads(self.rfile.read(n) or b"{}")
        except ValueError:
            body = None
        status, doc = self.server.responder(body)
        data = doc if isinstance(doc, bytes) else json.dumps(doc).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


class StubServer:
    """Serve ``responder(request_json) -> (status, json_or_bytes)`` on localhost.

    Use as a context manager; ``url`` is valid while it is open.
    """

    def __init__(self, responder: Callable, host: str = "127.0.0.1", port: int = 0):
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.daemon_threads = True
        self._httpd.responder = responder
        self._thread = threading.Thread(target=self._httpd.serve_forever, args=(0.05,), daemon=True)

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}/"

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._httpd.shutdown()
        self._httpd.server_close()


def chat_script_responder(replies, completion_tokens=None):
    """Replay canned assistant messages in order, one per request."""
    lock = threading.Lock()
    it = iter(list(replies))

    def respond(body):
        with lock:
            try:
                text = next(it)
            except StopIteration:
                return 500, {"error": "script exhausted"}
        doc = {"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]}
        if completion_tokens is not None:
            doc["usage"] = {"completion_tokens": completion_tokens}
        return 200, doc

    return respond


def status_responder(status: int, doc=None):
    return lambda body: (status, doc if doc is not None else {"error": f"status {status}"})


def echo_plugin_responder(body):
    """Plugin stub repeating the last history row of the target channels."""
    if not isinstance(body, dict):
        return 400, {"error": "body must be a JSON object"}
    names = body["channel_names"]
    idx = [names.index(c) for c in body.get("target_channels", names)]
    last = [body["history"][-1][i] for i in idx]
    return 200, {"forecast": [last] * int(body["horizon"]), "model_name": "echo"}


def short_plugin_responder(body):
    status, doc = echo_plugin_responder(body)
    doc["forecast"] = doc["forecast"][:-1]
    return status, doc
