"""Built-in forecasters and the HTTP plugin client for external models.

All built-ins work per target channel on the raw history. ``External`` models
are reached through a small JSON protocol, see ``docs/protocols.md``.
"""
from __future__ import annotations

import json
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .data import Window
from .errors import (
    ExternalContractError,
    ExternalModelError,
    ExternalTimeout,
    ExternalUpstreamError,
    ModelError,
)

AR_RIDGE = 1e-8


class ModelVariant(str, Enum):
    NAIVE = "naive"
    SEASONAL_NAIVE = "seasonal_naive"
    DRIFT = "drift"
    MOVING_AVERAGE = "moving_average"
    AUTOREGRESSIVE = "autoregressive"
    EXTERNAL = "external"


_PARAM = {
    ModelVariant.SEASONAL_NAIVE: "period",
    ModelVariant.MOVING_AVERAGE: "window",
    ModelVariant.AUTOREGRESSIVE: "order",
    ModelVariant.EXTERNAL: "endpoint",
}

_ALIASES = {"arima": ModelVariant.AUTOREGRESSIVE, "ar": ModelVariant.AUTOREGRESSIVE,
            "snaive": ModelVariant.SEASONAL_NAIVE, "ma": ModelVariant.MOVING_AVERAGE}


@dataclass(frozen=True)
class ForecastModelId:
    variant: ModelVariant
    period: int | None = None
    window: int | None = None
    order: int | None = None
    endpoint: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", ModelVariant(self.variant))
        need = _PARAM.get(self.variant)
        for name in ("period", "window", "order", "endpoint"):
            v = getattr(self, name)
            if name == need:
                if v is None:
                    raise ModelError(f"{self.variant.value} requires parameter {name!r}")
                if name != "endpoint" and (not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1):
                    raise ModelError(f"{self.variant.value}: {name} must be a positive integer, got {v!r}")
            elif v is not None:
                raise ModelError(f"{self.variant.value} does not take parameter {name!r}")

    @classmethod
    def naive(cls):
        return cls(ModelVariant.NAIVE)

    @classmethod
    def seasonal_naive(cls, period: int):
        return cls(ModelVariant.SEASONAL_NAIVE, period=period)

    @classmethod
    def drift(cls):
        return cls(ModelVariant.DRIFT)

    @classmethod
    def moving_average(cls, window: int):
        return cls(ModelVariant.MOVING_AVERAGE, window=window)

    @classmethod
    def autoregressive(cls, order: int):
        return cls(ModelVariant.AUTOREGRESSIVE, order=order)

    @classmethod
    def external(cls, endpoint: str):
        return cls(ModelVariant.EXTERNAL, endpoint=endpoint)

    def to_dict(self) -> dict:
        d = {"model": self.variant.value}
        p = _PARAM.get(self.variant)
        if p:
            d[p] = getattr(self, p)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ForecastModelId":
        d = dict(d)
        name = str(d.pop("model", "")).lower()
        try:
            variant = _ALIASES.get(name) or ModelVariant(name)
        except ValueError:
            raise ModelError(f"unknown model {name!r}") from None
        kwargs = {k: d[k] for k in ("period", "window", "order", "endpoint") if k in d}
        extra = set(d) - set(kwargs)
        if extra:
            raise ModelError(f"unexpected model arguments {sorted(extra)}")
        return cls(variant, **kwargs)

    @property
    def label(self) -> str:
        p = _PARAM.get(self.variant)
        return f"{self.variant.value}({p}={getattr(self, p)})" if p else self.variant.value


@dataclass(frozen=True, eq=False)
class Forecast:
    values: np.ndarray  # (H, C_target)
    model_id: ForecastModelId
    channel_names: tuple[str, ...]
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "model": self.model_id.to_dict(),
            "channels": list(self.channel_names),
            "values": self.values.tolist(),
            "notes": self.notes,
        }


@dataclass(frozen=True, eq=False)
class ARFit:
    coef: np.ndarray  # lag 1..p
    intercept: float
    method: str  # "lstsq", "ridge" or "constant"


def ar_design(x: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    n = x.shape[0]
    cols = [np.ones(n - p)] + [x[p - k:n - k] for k in range(1, p + 1)]
    return np.column_stack(cols), x[p:]


def fit_ar(history, p: int) -> ARFit:
    """Least-squares AR(p) with intercept on a single channel.

    Constant histories yield an intercept-only model; rank-deficient designs fall
    back to a ridge solve with ``AR_RIDGE``.
    """
    x = np.asarray(history, dtype=np.float64)
    if p < 1:
        raise ModelError("AR order must be at least 1")
    if x.shape[0] < 3 * p:
        raise ModelError(f"AR({p}) needs at least {3 * p} points, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ModelError("history contains missing or non-finite values")
    if np.ptp(x) == 0.0:
        return ARFit(np.zeros(p), float(x[0]), "constant")
    X, y = ar_design(x, p)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        beta = np.linalg.solve(X.T @ X + AR_RIDGE * np.eye(X.shape[1]), X.T @ y)
        method = "ridge"
    else:
        beta = np.linalg.lstsq(X, y, rcond=None)[0]
        method = "lstsq"
    return ARFit(beta[1:].copy(), float(beta[0]), method)


def _ar_forecast(x: np.ndarray, fit: ARFit, horizon: int) -> np.ndarray:
    p = fit.coef.shape[0]
    buf = list(x[-p:])
    out = np.empty(horizon)
    for h in range(horizon):
        # coef[k] multiplies lag k+1, i.e. buf[-(k+1)]
        v = fit.intercept + sum(fit.coef[k] * buf[-(k + 1)] for k in range(p))
        out[h] = v
        buf.append(v)
    return out


def default_ar_order(seasonal_period: int) -> int:
    return max(1, min(8, seasonal_period // 4))


def forecast_channel(model: ForecastModelId, x: np.ndarray, horizon: int) -> tuple[np.ndarray, dict]:
    """Forecast one channel with a built-in model. Returns (values, fit note)."""
    L = x.shape[0]
    if L == 0:
        raise ModelError("empty history")
    if not np.all(np.isfinite(x)):
        raise ModelError("history contains missing or non-finite values")
    v = model.variant
    h = np.arange(1, horizon + 1, dtype=np.float64)
    if v is ModelVariant.NAIVE:
        return np.full(horizon, x[-1]), {}
    if v is ModelVariant.SEASONAL_NAIVE:
        P = model.period
        if L < P:
            raise ModelError(f"seasonal_naive needs history >= period {P}, got {L}")
        return np.resize(x[-P:], horizon), {}
    if v is ModelVariant.DRIFT:
        if L < 2:
            raise ModelError("drift needs at least 2 points")
        slope = (x[-1] - x[0]) / (L - 1)
        return x[-1] + h * slope, {"slope": float(slope)}
    if v is ModelVariant.MOVING_AVERAGE:
        k = model.window
        if L < k:
            raise ModelError(f"moving_average needs history >= window {k}, got {L}")
        return np.full(horizon, x[-k:].mean()), {}
    if v is ModelVariant.AUTOREGRESSIVE:
        fit = fit_ar(x, model.order)
        return _ar_forecast(x, fit, horizon), {
            "coef": fit.coef.tolist(), "intercept": fit.intercept, "method": fit.method,
        }
    raise ModelError(f"{v.value} is not a built-in model")


def predict_time_series(model: ForecastModelId, window: Window, horizon: int | None = None,
                        registry: "ExternalRegistry | None" = None) -> Forecast:
    horizon = window.spec.horizon if horizon is None else int(horizon)
    if horizon < 1:
        raise ModelError("horizon must be positive")
    if model.variant is ModelVariant.EXTERNAL:
        return (registry or default_registry).call(model.endpoint, window, horizon)
    hist = window.target_history
    cols, notes = [], {}
    for j, name in enumerate(window.target_names):
        vals, note = forecast_channel(model, hist[:, j], horizon)
        cols.append(vals)
        if note:
            notes[name] = note
    values = np.column_stack(cols)
    if not np.all(np.isfinite(values)):
        raise ModelError(f"{model.label} produced non-finite values")
    return Forecast(values, model, window.target_names, notes)


def one_step_fitted(model: ForecastModelId, x) -> tuple[np.ndarray, np.ndarray]:
    """In-sample one-step-ahead fits of a built-in model.

    Returns ``(observed, fitted)`` aligned over the steps the model can predict.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ModelError("history contains missing or non-finite values")
    L = x.shape[0]
    v = model.variant
    if v is ModelVariant.NAIVE:
        start, fitted = 1, x[:-1]
    elif v is ModelVariant.SEASONAL_NAIVE:
        start = model.period
        if L <= start:
            raise ModelError(f"seasonal_naive needs history > period {start} for in-sample fits")
        fitted = x[:-start]
    elif v is ModelVariant.DRIFT:
        start = 2
        t = np.arange(2, L)
        fitted = x[t - 1] + (x[t - 1] - x[0]) / (t - 1)
    elif v is ModelVariant.MOVING_AVERAGE:
        start = model.window
        if L <= start:
            raise ModelError(f"moving_average needs history > window {start} for in-sample fits")
        c = np.concatenate([[0.0], np.cumsum(x)])
        fitted = (c[start:L] - c[:L - start]) / start
    elif v is ModelVariant.AUTOREGRESSIVE:
        fit = fit_ar(x, model.order)
        start = model.order
        X, _ = ar_design(x, start)
        fitted = X @ np.concatenate([[fit.intercept], fit.coef])
    else:
        raise ModelError(f"{v.value} has no in-sample fit")
    if x.shape[0] - start < 2:
        raise ModelError("history too short for in-sample fits")
    return x[start:], np.asarray(fitted, dtype=np.float64)


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    timeout: float = 30.0
    headers: tuple[tuple[str, str], ...] = ()


class ExternalRegistry:
    """Named plugin endpoints. Safe to share between episode workers."""

    def __init__(self):
        self._endpoints: dict[str, EndpointConfig] = {}
        self._lock = threading.Lock()

    def register(self, name: str, config: EndpointConfig | str) -> None:
        if isinstance(config, str):
            config = EndpointConfig(config)
        with self._lock:
            self._endpoints[name] = config

    def names(self) -> list[str]:
        with self._lock:
            return sorted(self._endpoints)

    def get(self, name: str) -> EndpointConfig:
        with self._lock:
            if name not in self._endpoints:
                raise ExternalModelError(f"external endpoint {name!r} is not registered")
            return self._endpoints[name]

    def call(self, name: str, window: Window, horizon: int) -> Forecast:
        cfg = self.get(name)
        request = build_plugin_request(window, horizon)
        t0 = time.perf_counter()
        doc = post_json(cfg.url, request, cfg.timeout, dict(cfg.headers))
        elapsed = time.perf_counter() - t0
        values = validate_plugin_response(doc, horizon, len(window.target_names))
        return Forecast(values, ForecastModelId.external(name), window.target_names,
                        {"model_name": str(doc.get("model_name", name)), "elapsed_s": round(elapsed, 6)})


default_registry = ExternalRegistry()


def register_external(name: str, config: EndpointConfig | str, registry: ExternalRegistry | None = None) -> None:
    (registry or default_registry).register(name, config)


def call_external(name: str, window: Window, horizon: int, registry: ExternalRegistry | None = None) -> Forecast:
    return (registry or default_registry).call(name, window, horizon)


def build_plugin_request(window: Window, horizon: int) -> dict:
    """Plugin request body; missing history cells become JSON null."""
    hist = [[None if np.isnan(v) else v for v in row] for row in window.history.tolist()]
    return {
        "history": hist,
        "channel_names": list(window.channel_names),
        "target_channels": list(window.target_names),
        "horizon": int(horizon),
        "frequency": int(window.frequency / np.timedelta64(1, "s")),
    }


def validate_plugin_response(doc, horizon: int, n_targets: int) -> np.ndarray:
    if not isinstance(doc, dict) or "forecast" not in doc:
        raise ExternalContractError("response lacks a 'forecast' field")
    try:
        values = np.array(doc["forecast"], dtype=np.float64)
    except (TypeError, ValueError):
        raise ExternalContractError("forecast is not a numeric matrix") from None
    if values.ndim == 1 and n_targets == 1:
        values = values.reshape(-1, 1)
    if values.ndim != 2 or values.shape != (horizon, n_targets):
        raise ExternalContractError(
            f"forecast shape {values.shape} does not match expected {(horizon, n_targets)}"
        )
    if not np.all(np.isfinite(values)):
        raise ExternalContractError("forecast contains non-finite values")
    return values


def post_json(url: str, payload: dict, timeout: float, headers: dict | None = None) -> dict:
    """POST a JSON body and decode a JSON reply, mapping failures to model errors."""
    body = json.dumps(payload).encode()
    req = urllib.request.Request(url, data=body, method="POST",
                                 headers={"Content-Type": "application/json", **(headers or {})})
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            raw = resp.read()
    except urllib.error.HTTPError as exc:
        if 400 <= exc.code < 500:
            raise ExternalContractError(f"{url} rejected the request with HTTP {exc.code}") from exc
        raise ExternalUpstreamError(f"{url} failed with HTTP {exc.code}") from exc
    except (TimeoutError, OSError) as exc:
        reason = getattr(exc, "reason", exc)
        if isinstance(exc, TimeoutError) or isinstance(reason, TimeoutError) or "timed out" in str(reason):
            raise ExternalTimeout(f"{url} timed out after {timeout} s") from exc
        raise ExternalUpstreamError(f"{url} unreachable: {reason}") from exc
    try:
        return json.loads(raw)
    except ValueError:
        raise ExternalContractError(f"{url} returned a non-JSON body") from None

