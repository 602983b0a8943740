"""Expose the toolkit and built-in forecasters over HTTP.

Routes:

* ``GET /tools``: the tool registry.
* ``POST /tools/<name>``: run a diagnostic tool; body is a plugin-style request
  plus optional ``arguments``, reply is ``{"tool_result": ...}``.
* ``POST /predict``: forecast; body is a plugin-style request plus an optional
  ``model`` object (default naive). The reply follows the plugin response
  contract, so this server can itself be registered as an external model.
"""
from __future__ import annotations

import json
import logging
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .data import Window, WindowSpec
from .errors import ModelError, ToolError, TsAgentError
from .models import ForecastModelId, predict_time_series
from .toolkit import run_tool, tool_registry

logger = logging.getLogger(__name__)


class RequestError(ValueError):
    pass


def window_from_request(body) -> Window:
    if not isinstance(body, dict):
        raise RequestError("body must be a JSON object")
    try:
        history = np.array(body["history"], dtype=np.float64)
        names = tuple(str(c) for c in body["channel_names"])
    except (KeyError, TypeError, ValueError) as exc:
        raise RequestError(f"bad history/channel_names: {exc}") from None
    if history.ndim == 1:
        history = history.reshape(-1, 1)
    if history.ndim != 2 or history.shape[1] != len(names) or history.shape[0] < 2:
        raise RequestError(f"history shape {history.shape} does not fit {len(names)} channels")
    targets = tuple(body.get("target_channels") or names)
    if not set(targets) <= set(names):
        raise RequestError("target_channels must be a subset of channel_names")
    L = history.shape[0]
    try:
        horizon = int(body.get("horizon", 1))
        freq = np.timedelta64(int(body.get("frequency", 3600)), "s")
        start = np.datetime64(body.get("start", "1970-01-01T00:00:00"), "s")
        period = int(body.get("seasonal_period", min(24, L)))
        spec = WindowSpec(L, horizon, 1, period, targets)
    except (TypeError, ValueError) as exc:
        raise RequestError(str(exc)) from None
    return Window(history=history, target=None, origin_index=0, spec=spec, channel_names=names,
                  target_names=targets, timestamps=start + freq * np.arange(L), frequency=freq,
                  dataset_id=str(body.get("dataset_id", "request")))


def handle(method: str, path: str, body) -> tuple[int, dict]:
    """Pure request dispatcher, separated from the socket layer for testing."""
    path = path.rstrip("/") or "/"
    if method == "GET" and path == "/tools":
        return 200, {"tools": [t.to_dict() for t in tool_registry()]}
    if method != "POST":
        return 404, {"error": f"no route for {method} {path}"}
    try:
        window = window_from_request(body)
        if path.startswith("/tools/"):
            args = body.get("arguments") or {}
            if not isinstance(args, dict):
                raise RequestError("arguments must be an object")
            return 200, {"tool_result": run_tool(path[len("/tools/"):], window, args).to_dict()}
        if path == "/predict":
            spec = body.get("model") or {"model": "naive"}
            model = ForecastModelId.from_dict(spec if isinstance(spec, dict) else {"model": spec})
            fc = predict_time_series(model, window, window.spec.horizon)
            return 200, {"forecast": fc.values.tolist(), "model_name": model.label}
    except (RequestError, ToolError, ModelError, ValueError) as exc:
        return 400, {"error": str(exc)}
    except TsAgentError as exc:
        return 500, {"error": str(exc)}
    return 404, {"error": f"no route for POST {path}"}


class _Handler(BaseHTTPRequestHandler):
    def log_message(self, fmt, *args):
        logger.debug("serve-tools: " + fmt, *args)

    def _reply(self, status: int, doc: dict):
        data = json.dumps(doc, allow_nan=False).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        self._reply(*handle("GET", self.path, None))

    def do_POST(self):
        n = int(self.headers.get("Content-Length") or 0)
        try:
            body = json.loads(self.rfile.read(n) or b"null")
        except ValueError:
            self._reply(400, {"error": "body is not valid JSON"})
            return
        self._reply(*handle("POST", self.path, body))


def make_server(host: str = "127.0.0.1", port: int = 8765) -> ThreadingHTTPServer:
    httpd = ThreadingHTTPServer((host, port), _Handler)
    httpd.daemon_threads = True
    return httpd
