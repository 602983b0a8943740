"""Small numeric primitives shared by the toolkit, reward and curriculum."""
from __future__ import annotations

import math

import numpy as np


def local_extrema(x, e: int = 2) -> tuple[list[int], list[int]]:
    """Indices of strict local maxima and minima over a +/-e neighborhood.

    Only indices with a complete neighborhood qualify, so series endpoints are
    never reported.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    maxima, minima = [], []
    if n < 2 * e + 1:
        return maxima, minima
    # stacked neighbor offsets -e..-1, 1..e
    offsets = [k for k in range(-e, e + 1) if k != 0]
    core = x[e:n - e]
    neigh = np.stack([x[e + k:n - e + k] for k in offsets])
    is_max = np.all(core > neigh, axis=0)
    is_min = np.all(core < neigh, axis=0)
    maxima = (np.flatnonzero(is_max) + e).tolist()
    minima = (np.flatnonzero(is_min) + e).tolist()
    return maxima, minima


def ordinal_patterns(x, order: int = 3, delay: int = 1) -> np.ndarray:
    """Integer code of the ordinal pattern of every delay vector.

    Equal values are ranked by position (earlier index ranks lower), so the
    pattern of a constant vector is the identity permutation.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0] - (order - 1) * delay
    if n <= 0:
        return np.empty(0, dtype=np.int64)
    emb = np.stack([x[i * delay:i * delay + n] for i in range(order)], axis=1)
    ranks = np.argsort(emb, axis=1, kind="stable")
    weights = order ** np.arange(order - 1, -1, -1)
    return ranks @ weights


def permutation_entropy(x, order: int = 3, delay: int = 1) -> float:
    """Normalized permutation entropy in [0, 1].

    Delay vectors containing a missing value (NaN) are skipped.
    """
    if order < 2:
        raise ValueError("order must be at least 2")
    if delay < 1:
        raise ValueError("delay must be at least 1")
    x = np.asarray(x, dtype=np.float64)
    need = (order - 1) * delay + 1
    if x.shape[0] < need:
        raise ValueError(f"series of length {x.shape[0]} too short for order {order}, delay {delay} (needs {need})")
    codes = ordinal_patterns(x, order, delay)
    if np.isnan(x).any():
        n = codes.shape[0]
        bad = np.zeros(n, dtype=bool)
        nan = np.isnan(x)
        for i in range(order):
            bad |= nan[i * delay:i * delay + n]
        codes = codes[~bad]
        if codes.size == 0:
            raise ValueError("no complete delay vectors")
    _, counts = np.unique(codes, return_counts=True)
    p = counts / counts.sum()
    h = float(-(p * np.log(p)).sum())
    h = h / math.log(math.factorial(order))
    return min(1.0, max(0.0, h))


def ols_line(y) -> tuple[float, float]:
    """Least-squares (slope, intercept) of y against 0..n-1."""
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    if n < 2:
        return 0.0, float(y[0]) if n else 0.0
    t = np.arange(n, dtype=np.float64)
    tc = t - t.mean()
    slope = float(np.dot(tc, y - y.mean()) / np.dot(tc, tc))
    return slope, float(y.mean() - slope * t.mean())


def autocorrelation(x, max_lag: int) -> list[float | None]:
    """Sample autocorrelations at lags 1..max_lag (biased estimator).

    Returns ``None`` entries when the series has zero variance.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x - x.mean()
    denom = float(np.dot(d, d))
    if denom == 0.0:
        return [None] * max_lag
    return [float(np.dot(d[:-k], d[k:]) / denom) for k in range(1, max_lag + 1)]


def moments(x) -> dict:
    """Population mean/std plus skewness and excess kurtosis (None if std is 0)."""
    x = np.asarray(x, dtype=np.float64)
    mean = float(x.mean())
    d = x - mean
    var = float(np.mean(d * d))
    std = math.sqrt(var)
    if std == 0.0:
        return {"mean": mean, "std": 0.0, "skewness": None, "kurtosis": None}
    z = d / std  # standardize first so tiny variances cannot underflow
    return {
        "mean": mean,
        "std": std,
        "skewness": float(np.mean(z ** 3)),
        "kurtosis": float(np.mean(z ** 4) - 3.0),
    }


def finite_or_none(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None
