"""Diagnostic tools: pure functions from a window to a JSON-serializable summary.

Every payload has a fixed key order and reports undefined statistics as ``None``
(``null`` in JSON) instead of NaN or infinities.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Window
from .errors import ModelError, ToolError
from .models import ForecastModelId, one_step_fitted
from .signal import autocorrelation, finite_or_none, local_extrema, moments, ols_line, permutation_entropy

EVENT_LABELS = ("Rise", "Decline", "Stable", "Oscillation")

PREDICT_TOOL = "predict_time_series"
DIAGNOSTIC_TOOLS = (
    "extract_data_quality",
    "extract_basic_statistics",
    "extract_within_channel_dynamics",
    "summarize_events",
    "diagnose_residuals",
)


@dataclass(frozen=True)
class ToolResult:
    tool_name: str
    channel_scope: str  # "all" or a channel name
    payload: dict
    produced_at_turn: int = 0

    def to_dict(self) -> dict:
        return {
            "tool_name": self.tool_name,
            "channel_scope": self.channel_scope,
            "produced_at_turn": self.produced_at_turn,
            "payload": self.payload,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), allow_nan=False)

    @classmethod
    def from_dict(cls, d: dict) -> "ToolResult":
        return cls(d["tool_name"], d["channel_scope"], d["payload"], int(d.get("produced_at_turn", 0)))


@dataclass(frozen=True)
class Segment:
    start: int
    end: int  # inclusive
    label: str
    slope: float
    variance: float


def _channels(window: Window, channel: str | None) -> list[tuple[str, np.ndarray]]:
    if channel is None:
        names = list(window.target_names)
    else:
        if channel not in window.channel_names:
            raise ToolError(f"unknown channel {channel!r}")
        names = [channel]
    return [(n, window.history[:, window.channel_names.index(n)]) for n in names]


def _scope(channel: str | None) -> str:
    return "all" if channel is None else channel


def _longest_plateau(x: np.ndarray, level: float) -> int:
    best = run = 0
    for v in x:
        run = run + 1 if v == level else 0
        best = max(best, run)
    return best


def assess_data_quality(window: Window, channel: str | None = None, turn: int = 0,
                        tol_const: float = 1e-9, z_thresh: float = 3.0,
                        abnormal_frac: float = 0.05) -> ToolResult:
    """Missing values, constant channels, saturation plateaus and outlier share.

    Runs over every history channel unless ``channel`` is given.
    """
    if window.history.shape[0] == 0:
        raise ToolError("empty history")
    if channel is not None and channel not in window.channel_names:
        raise ToolError(f"unknown channel {channel!r}")
    names = list(window.channel_names) if channel is None else [channel]
    out = {}
    for name in names:
        x = window.history[:, window.channel_names.index(name)]
        L = x.shape[0]
        miss = np.isnan(x)
        valid = x[~miss]
        rec = {"missing_count": int(miss.sum()), "missing_fraction": float(miss.sum() / L)}
        if valid.size == 0:
            rec.update(is_constant=None, saturation_fraction=None, abnormal_fraction=None, abnormal=None)
        else:
            lo, hi = float(valid.min()), float(valid.max())
            plateau = max(_longest_plateau(x, lo), _longest_plateau(x, hi))
            std = float(valid.std())
            if std > 0:
                z = np.abs((valid - valid.mean()) / std)
                frac = float(np.mean(z > z_thresh))
            else:
                frac = 0.0
            rec.update(
                is_constant=bool(hi - lo < tol_const),
                saturation_fraction=plateau / L,
                abnormal_fraction=frac,
                abnormal=bool(frac > abnormal_frac),
            )
        out[name] = rec
    return ToolResult("extract_data_quality", _scope(channel), {"channels": out}, turn)


def _spectral(x: np.ndarray, top: int = 3) -> list[dict]:
    d = x - x.mean()
    n = d.shape[0]
    mag = np.abs(np.fft.rfft(d))[1:]
    if mag.size == 0 or mag.max() <= 1e-9 * max(1.0, float(np.abs(x).max())) * n:
        return []
    order = np.argsort(-mag, kind="stable")[:top]
    return [{"bin": int(k + 1), "period": float(n / (k + 1)), "magnitude": float(mag[k])} for k in order]


def extract_basic_statistics(window: Window, channel: str | None = None, turn: int = 0) -> ToolResult:
    """Location, dispersion, shape, correlation and leading spectral periods."""
    chans = _channels(window, channel) if channel else [
        (n, window.history[:, i]) for i, n in enumerate(window.channel_names)]
    stats = {}
    for name, x in chans:
        valid = x[~np.isnan(x)]
        if valid.size < 2:
            stats[name] = None
            continue
        m = moments(valid)
        med = float(np.median(valid))
        std = m["std"]
        cv = None if std == 0.0 or m["mean"] == 0.0 else std / abs(m["mean"])
        # spectrum uses mean-filled gaps so the grid stays regular
        filled = np.where(np.isnan(x), valid.mean(), x)
        stats[name] = {
            "mean": m["mean"],
            "median": med,
            "std": std,
            "mad": float(np.median(np.abs(valid - med))),
            "min": float(valid.min()),
            "max": float(valid.max()),
            "skewness": m["skewness"],
            "kurtosis": m["kurtosis"],
            "cv": finite_or_none(cv),
            "spectral": _spectral(filled),
        }
    names = [n for n, _ in chans]
    corr = []
    for i, (_, a) in enumerate(chans):
        row = []
        for j, (_, b) in enumerate(chans):
            ok = ~(np.isnan(a) | np.isnan(b))
            if ok.sum() < 2 or a[ok].std() == 0 or b[ok].std() == 0:
                row.append(None)
            elif i == j:
                row.append(1.0)
            else:
                row.append(finite_or_none(np.corrcoef(a[ok], b[ok])[0, 1]))
        corr.append(row)
    payload = {"channels": stats, "correlation": {"channels": names, "matrix": corr}}
    return ToolResult("extract_basic_statistics", _scope(channel), payload, turn)


def changepoint_scores(x: np.ndarray, w: int) -> np.ndarray:
    """|mean(after) - mean(before)| / pooled std for every split index.

    Index i compares x[i-w:i] with x[i:i+w]; entries without two full windows are 0.
    """
    n = x.shape[0]
    s = np.zeros(n)
    if n < 2 * w:
        return s
    wins = np.lib.stride_tricks.sliding_window_view(x, w)
    means, vars_ = wins.mean(axis=1), wins.var(axis=1)
    idx = np.arange(w, n - w + 1)
    diff = np.abs(means[idx] - means[idx - w])
    pooled = np.sqrt((vars_[idx] + vars_[idx - w]) / 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where(pooled > 0, diff / np.where(pooled > 0, pooled, 1.0),
                         np.where(diff > 0, np.inf, 0.0))
    s[idx] = score
    return s


def detect_changepoints(x, w: int = 12, threshold: float = 3.0) -> list[int]:
    """Mean-shift changepoints: peaks of the two-window score above ``threshold``.

    A peak must be the first maximum of its +/-w neighborhood and rise more than
    ``threshold`` above the neighborhood minimum, which keeps smooth ramps (a flat
    score plateau) from producing detections.
    """
    x = np.asarray(x, dtype=np.float64)
    s = changepoint_scores(x, w)
    n = x.shape[0]
    cps = []
    for i in range(w, n - w + 1):
        if i >= n or not s[i] > threshold:
            continue
        lo, hi = max(w, i - w), min(n - w, i + w)
        neigh = s[lo:hi + 1]
        if s[i] < neigh.max() or int(np.argmax(neigh)) + lo != i:
            continue
        floor = neigh.min()
        if floor == np.inf or not s[i] - floor > threshold:  # an all-infinite run has no peak
            continue
        cps.append(i)
    return cps


def stable_segments(x: np.ndarray, window: int = 8, q: float = 25.0) -> list[list[int]]:
    n = x.shape[0]
    if n < window:
        return []
    rv = np.array([x[j:j + window].var() for j in range(n - window + 1)])
    scale = max(1.0, float(np.abs(x).max())) ** 2
    flag = (rv < np.percentile(rv, q)) | (rv <= 1e-12 * scale)
    spans = []
    j = 0
    while j < flag.size:
        if flag[j]:
            k = j
            while k + 1 < flag.size and flag[k + 1]:
                k += 1
            spans.append([j, k + window - 1])
            j = k + 1
        else:
            j += 1
    merged = []
    for s in spans:
        if merged and s[0] <= merged[-1][1] + 1:
            merged[-1][1] = max(merged[-1][1], s[1])
        else:
            merged.append(s)
    return merged


def _dynamics(x: np.ndarray, w_cp: int, theta_cp: float, e: int, stable_window: int,
              q: float, pe_order: int, pe_delay: int) -> dict:
    pos = np.flatnonzero(~np.isnan(x))
    v = x[pos]
    if v.size < 2 * w_cp:
        raise ToolError(f"channel has {v.size} valid points, needs at least {2 * w_cp}")
    cps = detect_changepoints(v, w_cp, theta_cp)
    bounds = [0] + cps + [v.size]
    segments = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        slope, _ = ols_line(v[a:b])
        segments.append({"start": int(pos[a]), "end": int(pos[b - 1]), "slope": slope})
    maxima, minima = local_extrema(v, e)
    return {
        "changepoints": [int(pos[i]) for i in cps],
        "segments": segments,
        "stable_segments": [[int(pos[a]), int(pos[b])] for a, b in stable_segments(v, stable_window, q)],
        "local_maxima": [int(pos[i]) for i in maxima],
        "local_minima": [int(pos[i]) for i in minima],
        "permutation_entropy": permutation_entropy(v, pe_order, pe_delay),
    }


def extract_within_channel_dynamics(window: Window, channel: str | None = None, turn: int = 0,
                                    w_cp: int = 12, theta_cp: float = 3.0, extrema_radius: int = 2,
                                    stable_window: int = 8, stable_quantile: float = 25.0,
                                    pe_order: int = 3, pe_delay: int = 1) -> ToolResult:
    """Changepoints, per-segment slopes, stable runs, local extrema and entropy."""
    out = {}
    for name, x in _channels(window, channel):
        out[name] = _dynamics(x, w_cp, theta_cp, extrema_radius, stable_window,
                              stable_quantile, pe_order, pe_delay)
    return ToolResult("extract_within_channel_dynamics", _scope(channel), {"channels": out}, turn)


def label_segments(x, g: int, tau_s: float = 0.25, tau_r: float = 0.5) -> list[Segment]:
    """Tile ``x`` into length-g segments and label each one.

    A segment is Rise/Decline when a straight line explains it (residual std below
    ``tau_r`` times the segment std), Stable when its std is below ``tau_s`` times
    the channel std, and Oscillation otherwise.
    """
    x = np.asarray(x, dtype=np.float64)
    chan_std = float(x.std())
    segs = []
    for a in range(0, x.shape[0], g):
        y = x[a:a + g]
        slope, icpt = ols_line(y)
        seg_std = float(y.std())
        resid = y - (icpt + slope * np.arange(y.shape[0]))
        r_std = float(resid.std())
        if seg_std > 0 and y.shape[0] > 2 and slope != 0.0 and r_std < tau_r * seg_std:
            label = "Rise" if slope > 0 else "Decline"
        elif seg_std <= tau_s * chan_std:
            label = "Stable"
        else:
            label = "Oscillation"
        segs.append(Segment(a, a + y.shape[0] - 1, label, slope, seg_std ** 2))
    return segs


def _events(x: np.ndarray, g: int, tau_s: float, tau_r: float) -> dict:
    v = x[~np.isnan(x)]
    if v.size < g:
        raise ToolError(f"channel has {v.size} valid points, needs at least segment length {g}")
    segs = label_segments(v, g, tau_s, tau_r)
    weight = {lab: 0 for lab in EVENT_LABELS}
    for s in segs:
        weight[s.label] += s.end - s.start + 1
    prevalence = {lab: weight[lab] / v.size for lab in EVENT_LABELS}
    dominant = max(EVENT_LABELS, key=lambda lab: (weight[lab], -EVENT_LABELS.index(lab)))
    slope, _ = ols_line(v)
    std = float(v.std())
    return {
        "segment_length": g,
        "prevalence": prevalence,
        "dominant_label": dominant,
        "trend_slope": slope,
        "trend_strength": None if std == 0.0 else abs(slope) * v.size / std,
        "segments": [{"start": s.start, "end": s.end, "label": s.label} for s in segs],
    }


def default_segment_length(seasonal_period: int) -> int:
    return max(4, seasonal_period // 4)


def summarize_events(window: Window, channel: str | None = None, turn: int = 0,
                     segment_length: int | None = None, tau_s: float = 0.25,
                     tau_r: float = 0.5) -> ToolResult:
    """Rise/Decline/Stable/Oscillation prevalence over fixed-length segments."""
    g = segment_length or default_segment_length(window.spec.seasonal_period)
    out = {name: _events(x, g, tau_s, tau_r) for name, x in _channels(window, channel)}
    return ToolResult("summarize_events", _scope(channel), {"channels": out}, turn)


def ljung_box(acf: list[float | None], n: int) -> float:
    q = 0.0
    for k, r in enumerate(acf, start=1):
        if r is None:
            return 0.0
        q += r * r / (n - k)
    return n * (n + 2) * q


def residual_summary(res: np.ndarray, lookback: int) -> dict:
    n = res.shape[0]
    m = moments(res)
    nlags = max(1, min(10, lookback // 4, n - 1))
    acf = autocorrelation(res, nlags)
    std = m["std"]
    absr = np.abs(res)
    return {
        "n": int(n),
        "mean": m["mean"],
        "std": std,
        "skewness": m["skewness"],
        "kurtosis": m["kurtosis"],
        "acf": acf,
        "ljung_box_q": ljung_box(acf, n),
        "extreme_count": int(np.sum(absr > 3 * std)) if std > 0 else 0,
        "tail_ratio": None if std == 0.0 else float(np.percentile(absr, 99) / std),
    }


def diagnose_residuals(window: Window, baseline_model: ForecastModelId, channel: str | None = None,
                       turn: int = 0) -> ToolResult:
    """Distribution, autocorrelation and tails of one-step baseline residuals."""
    out = {}
    for name, x in _channels(window, channel):
        try:
            obs, fit = one_step_fitted(baseline_model, x)
        except ModelError as exc:
            raise ToolError(f"baseline {baseline_model.label} cannot fit channel {name}: {exc}") from exc
        out[name] = residual_summary(obs - fit, x.shape[0])
    payload = {"baseline": baseline_model.to_dict(), "channels": out}
    return ToolResult("diagnose_residuals", _scope(channel), payload, turn)


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    parameters: dict = field(default_factory=dict)  # JSON schema of the call arguments
    turn1: bool = False
    turn2: bool = False

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "parameters": self.parameters,
            "stages": {"feature_extraction": self.turn1, "prediction": self.turn2},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToolSpec":
        st = d.get("stages", {})
        return cls(d["name"], d["description"], d.get("parameters", {}),
                   bool(st.get("feature_extraction")), bool(st.get("prediction")))


_CHANNEL_ARG = {"channel": {"type": "string", "description": "history channel; omit for all target channels"}}


def _schema(props: dict, required: tuple = ()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_REGISTRY = (
    ToolSpec("extract_data_quality",
             "Missing values, saturation plateaus, constant or abnormal channels.",
             _schema({"channel": {"type": "string"}}), turn1=True),
    ToolSpec("extract_basic_statistics",
             "Mean, median, MAD, dispersion, shape, cross-channel correlation and spectral periods.",
             _schema({"channel": {"type": "string"}}), turn1=True),
    ToolSpec("extract_within_channel_dynamics",
             "Changepoints, segment slopes, stable runs, local extrema and permutation entropy.",
             _schema(dict(_CHANNEL_ARG)), turn1=True),
    ToolSpec("summarize_events",
             "Share of rising, declining, stable and oscillating segments and the dominant pattern.",
             _schema(dict(_CHANNEL_ARG)), turn1=True),
    ToolSpec("diagnose_residuals",
             "Residual distribution, autocorrelation, Ljung-Box statistic and tails of a baseline model.",
             _schema({**_CHANNEL_ARG, "baseline": {"type": "object"}}), turn1=True),
    ToolSpec(PREDICT_TOOL,
             "Forecast the horizon with a named model: naive, seasonal_naive(period), drift, "
             "moving_average(window), autoregressive(order) or external(endpoint).",
             _schema({"model": {"type": "string"}, "period": {"type": "integer"},
                      "window": {"type": "integer"}, "order": {"type": "integer"},
                      "endpoint": {"type": "string"}}, ("model",)), turn2=True),
)


def tool_registry() -> list[ToolSpec]:
    return list(_REGISTRY)


def registry_names() -> list[str]:
    return [t.name for t in _REGISTRY]


def run_tool(name: str, window: Window, args: dict | None = None, turn: int = 0) -> ToolResult:
    """Dispatch a diagnostic tool call by registry name."""
    args = dict(args or {})
    channel = args.pop("channel", None)
    if name == "diagnose_residuals":
        baseline = args.pop("baseline", None)
        if baseline is None:
            raise ToolError("diagnose_residuals requires a 'baseline' model argument")
        try:
            model = ForecastModelId.from_dict(baseline if isinstance(baseline, dict) else {"model": baseline})
        except ModelError as exc:
            raise ToolError(str(exc)) from exc
        fn = lambda: diagnose_residuals(window, model, channel, turn)  # noqa: E731
    else:
        funcs = {
            "extract_data_quality": assess_data_quality,
            "extract_basic_statistics": extract_basic_statistics,
            "extract_within_channel_dynamics": extract_within_channel_dynamics,
            "summarize_events": summarize_events,
        }
        if name not in funcs:
            raise ToolError(f"{name!r} is not a diagnostic tool")
        fn = lambda: funcs[name](window, channel, turn)  # noqa: E731
    if args:
        raise ToolError(f"{name}: unexpected arguments {sorted(args)}")
    if channel is not None and channel not in window.channel_names:
        raise ToolError(f"unknown channel {channel!r}")
    return fn()


def payload_is_finite(obj) -> bool:
    if isinstance(obj, float):
        return math.isfinite(obj)
    if isinstance(obj, dict):
        return all(payload_is_finite(v) for v in obj.values())
    if isinstance(obj, (list, tuple)):
        return all(payload_is_finite(v) for v in obj)
    return True
