"""Episode-level reward: accuracy, trend/seasonal consistency, turning points,
format validity and length constraints, combined once per episode."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import ConfigError
from .signal import local_extrema

EPS = 1e-8


@dataclass(frozen=True)
class RewardWeights:
    w_acc: float = 0.6
    w_trend: float = 0.1
    w_seas: float = 0.1
    w_turn: float = 0.2
    p_format: float = 1.0
    p_length_answer: float = 1.0
    p_length_response: float = 1.0
    token_budget: int = 4096
    tolerance: int = 2  # turning-point index tolerance
    extrema_radius: int = 2

    def __post_init__(self):
        ws = (self.w_acc, self.w_trend, self.w_seas, self.w_turn)
        if any(w < 0 for w in ws) or abs(math.fsum(ws) - 1.0) > 1e-9:
            raise ConfigError(f"component weights must be non-negative and sum to 1, got {ws}")
        if min(self.p_format, self.p_length_answer, self.p_length_response) < 0:
            raise ConfigError("penalties must be non-negative")
        if self.token_budget < 1:
            raise ConfigError("token_budget must be positive")

    def ablate(self, term: str) -> "RewardWeights":
        """Drop one reward term.

        Component terms (``acc``, ``trend``, ``seas``, ``turn``) are zeroed and the
        remaining weights renormalized; ``length`` zeroes both length penalties and
        ``format`` the format penalty.
        """
        if term == "length":
            return replace(self, p_length_answer=0.0, p_length_response=0.0)
        if term == "format":
            return replace(self, p_format=0.0)
        key = f"w_{term}"
        if key not in ("w_acc", "w_trend", "w_seas", "w_turn"):
            raise ConfigError(f"unknown reward term {term!r}")
        ws = {k: getattr(self, k) for k in ("w_acc", "w_trend", "w_seas", "w_turn")}
        ws[key] = 0.0
        total = math.fsum(ws.values())
        if total == 0:
            raise ConfigError("cannot ablate the only weighted component")
        return replace(self, **{k: v / total for k, v in ws.items()})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RewardBreakdown:
    accuracy: float
    trend: float
    seasonal: float
    turning: float
    format_ok: bool
    answer_length_delta: int
    response_tokens: int | None
    length_penalty: float
    total: float

    def to_dict(self) -> dict:
        return asdict(self)


def _as2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(-1, 1) if a.ndim == 1 else a


def _check(forecast, truth):
    f, t = _as2d(forecast), _as2d(truth)
    if f.shape != t.shape:
        raise ValueError(f"forecast shape {f.shape} != truth shape {t.shape}")
    return f, t


def normalized_mse(forecast, truth, eps: float = EPS) -> float:
    """MSE divided by the truth variance over the horizon (per channel, averaged)."""
    f, t = _check(forecast, truth)
    mse = float(np.mean((f - t) ** 2))
    var = float(np.mean(t.var(axis=0)))
    return mse / (var + eps)


def log_normalized_score(nmse: float) -> float:
    return 1.0 / (1.0 + math.log1p(nmse))


def accuracy_reward(forecast, truth, eps: float = EPS) -> float:
    return log_normalized_score(normalized_mse(forecast, truth, eps))


def _centered_ma(x: np.ndarray, period: int) -> np.ndarray:
    # even periods use the 2xP weighting; windows shrink symmetrically at the edges
    half = period // 2
    if period % 2:
        w = np.ones(period)
    else:
        w = np.ones(period + 1)
        w[0] = w[-1] = 0.5
    n = x.shape[0]
    out = np.empty(n)
    for i in range(n):
        r = min(half, i, n - 1 - i)
        ww = w[half - r:half + r + 1]
        out[i] = float(np.dot(ww, x[i - r:i + r + 1]) / ww.sum())
    return out


def decompose(series, period: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Additive moving-average decomposition into (trend, seasonal, residual).

    Seasonal indices come from the points where the centered window is complete;
    the trend is then the edge-shrinking moving average of the deseasonalized
    series. Series shorter than two periods get a zero seasonal component.
    """
    if period < 2:
        raise ValueError("period must be at least 2")
    x = np.asarray(series, dtype=np.float64)
    n = x.shape[0]
    seasonal = np.zeros_like(x)
    if n >= 2 * period:
        half = period // 2
        inner = np.arange(half, n - half)
        detr = x[inner] - _centered_ma(x, period)[inner]
        phase = inner % period
        means = np.array([detr[phase == k].mean() for k in range(period)])
        means -= means.mean()
        seasonal = means[np.arange(n) % period]
    trend = _centered_ma(x - seasonal, period)
    return trend, seasonal, x - trend - seasonal


def _consistency(a: np.ndarray, b: np.ndarray) -> float:
    ca, cb = a - a.mean(), b - b.mean()
    na, nb = float(np.sqrt(np.dot(ca, ca))), float(np.sqrt(np.dot(cb, cb)))
    scale = max(1.0, float(np.abs(a).max()), float(np.abs(b).max()))
    const_a, const_b = na <= 1e-12 * scale, nb <= 1e-12 * scale
    if const_a or const_b:
        rho = 1.0 if (const_a and const_b) else 0.0
    else:
        rho = float(np.clip(np.dot(ca, cb) / (na * nb), -1.0, 1.0))
    return (rho + 1.0) / 2.0


def component_consistency(forecast, truth, which: str, period: int) -> float:
    """(rho + 1) / 2 for the Pearson correlation of one decomposed component,
    averaged over channels."""
    if which not in ("trend", "seasonal"):
        raise ValueError("which must be 'trend' or 'seasonal'")
    f, t = _check(forecast, truth)
    k = 0 if which == "trend" else 1
    scores = [_consistency(decompose(f[:, j], period)[k], decompose(t[:, j], period)[k])
              for j in range(f.shape[1])]
    return float(np.mean(scores))


def match_extrema(pred: list[int], true: list[int], tol: int) -> int:
    """Greedy left-to-right one-to-one matching within |index gap| <= tol."""
    used = [False] * len(true)
    m = 0
    for p in pred:
        for k, q in enumerate(true):
            if not used[k] and abs(p - q) <= tol:
                used[k] = True
                m += 1
                break
    return m


def turning_point_score(forecast, truth, tolerance: int = 2, radius: int = 2) -> float:
    """F1 of same-polarity extrema matched within ``tolerance`` steps, averaged over channels."""
    f, t = _check(forecast, truth)
    scores = []
    for j in range(f.shape[1]):
        fmax, fmin = local_extrema(f[:, j], radius)
        tmax, tmin = local_extrema(t[:, j], radius)
        nf, nt = len(fmax) + len(fmin), len(tmax) + len(tmin)
        if nf == 0 and nt == 0:
            scores.append(1.0)
            continue
        m = match_extrema(fmax, tmax, tolerance) + match_extrema(fmin, tmin, tolerance)
        scores.append(2.0 * m / (nf + nt))
    return float(np.mean(scores))


def total_reward(forecast, truth, weights: RewardWeights = RewardWeights(), *, period: int,
                 format_ok: bool = True, response_tokens: int | None = None) -> RewardBreakdown:
    """Combine all reward terms for one finished episode.

    ``forecast`` may be ``None`` (no parseable answer) or have a different number
    of rows than ``truth``; components are then scored on the overlapping prefix
    and the row difference is charged as an answer-length penalty. Length
    penalties are capped at half the earned component score, so every
    format-valid episode with a positive score beats every format-invalid one.
    """
    t = _as2d(truth)
    H = t.shape[0]
    if forecast is None:
        f = np.empty((0, t.shape[1]))
    else:
        f = _as2d(forecast)
        if f.shape[1] != t.shape[1]:
            raise ValueError(f"forecast has {f.shape[1]} channels, truth has {t.shape[1]}")
    delta = int(f.shape[0] - H)
    n = min(H, f.shape[0])
    if n == 0:
        acc = trend = seas = turn = 0.0
    else:
        fp, tp = f[:n], t[:n]
        acc = accuracy_reward(fp, tp)
        trend = component_consistency(fp, tp, "trend", period)
        seas = component_consistency(fp, tp, "seasonal", period)
        turn = turning_point_score(fp, tp, weights.tolerance, weights.extrema_radius)
    earned = math.fsum([weights.w_acc * acc, weights.w_trend * trend,
                        weights.w_seas * seas, weights.w_turn * turn])
    raw_pen = weights.p_length_answer * abs(delta) / H
    if response_tokens is not None:
        raw_pen += weights.p_length_response * max(0, response_tokens - weights.token_budget) / weights.token_budget
    pen = min(raw_pen, 0.5 * earned)
    total = earned - pen - (0.0 if format_ok else weights.p_format)
    total = min(1.0, max(-1.0, total))
    return RewardBreakdown(acc, trend, seas, turn, bool(format_ok), delta, response_tokens, pen, total)


def failed_reward(weights: RewardWeights = RewardWeights(), horizon: int = 1) -> RewardBreakdown:
    """Reward of an episode that ended without a usable final answer."""
    total = max(-1.0, -weights.p_format)
    return RewardBreakdown(0.0, 0.0, 0.0, 0.0, False, -horizon, None, 0.0, total)
