"""Difficulty scoring, banding and staged ordering of training windows."""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .data import Window
from .errors import ModelError
from .models import ExternalRegistry, ForecastModelId, predict_time_series
from .reward import normalized_mse
from .signal import permutation_entropy

__all__ = [
    "DifficultyProfile", "BandThresholds", "permutation_entropy", "teacher_difficulty",
    "score_windows", "assign_bands", "schedule", "write_manifest",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DifficultyProfile:
    dataset_id: str
    origin_index: int
    teacher_error: float
    perm_entropy: float
    band: int = 0  # 0 until assign_bands runs


@dataclass(frozen=True)
class BandThresholds:
    error_low: float
    error_high: float
    entropy: float


def teacher_difficulty(window: Window, teacher: ForecastModelId,
                       registry: ExternalRegistry | None = None) -> float:
    if window.target is None:
        raise ValueError("window has no ground-truth target")
    fc = predict_time_series(teacher, window, window.spec.horizon, registry)
    return normalized_mse(fc.values, window.target)


def window_entropy(window: Window, order: int = 3, delay: int = 1) -> float:
    hist = window.target_history
    return float(np.mean([permutation_entropy(hist[:, j], order, delay) for j in range(hist.shape[1])]))


def score_windows(windows, teacher: ForecastModelId, order: int = 3, delay: int = 1,
                  registry: ExternalRegistry | None = None) -> tuple[list[DifficultyProfile], list[str]]:
    """Profile every window; failures are left out and described in the report lines."""
    profiles, report = [], []
    for w in windows:
        try:
            err = teacher_difficulty(w, teacher, registry)
        except (ModelError, ValueError) as exc:
            report.append(f"{w.dataset_id}@{w.origin_index}: unscorable ({exc})")
            continue
        profiles.append(DifficultyProfile(w.dataset_id, int(w.origin_index), err, window_entropy(w, order, delay)))
    return profiles, report


def default_thresholds(profiles) -> BandThresholds:
    e = np.array([p.teacher_error for p in profiles])
    h = np.array([p.perm_entropy for p in profiles])
    q1, q2 = np.quantile(e, [1 / 3, 2 / 3])
    return BandThresholds(float(q1), float(q2), float(np.quantile(h, 2 / 3)))


def band_of(error: float, entropy: float, th: BandThresholds) -> int:
    if entropy > th.entropy:
        return 3
    return 1 if error <= th.error_low else 2


def assign_bands(profiles, thresholds: BandThresholds | None = None):
    """Return ``(banded_profiles, thresholds)``.

    Band 1: low teacher error and regular structure; band 2: higher error,
    still regular; band 3: high permutation entropy.
    """
    profiles = list(profiles)
    if len(profiles) < 3:
        raise ValueError(f"need at least 3 scorable profiles, got {len(profiles)}")
    th = thresholds or default_thresholds(profiles)
    first = (profiles[0].teacher_error, profiles[0].perm_entropy)
    if all((p.teacher_error, p.perm_entropy) == first for p in profiles):
        warnings.warn("all difficulty profiles are identical; every sample goes to band 1", stacklevel=2)
        return [replace(p, band=1) for p in profiles], th
    return [replace(p, band=band_of(p.teacher_error, p.perm_entropy, th)) for p in profiles], th


def schedule(profiles, epochs_per_stage: int = 1, seed: int = 0) -> tuple[list[DifficultyProfile], list[str]]:
    """Band 1 first, then 2, then 3; each band shuffled with a seeded generator."""
    rng = np.random.default_rng(seed)
    stream, report = [], []
    for band in (1, 2, 3):
        members = [p for p in profiles if p.band == band]
        if not members:
            report.append(f"band {band}: empty, skipped")
            logger.info("curriculum band %d is empty", band)
            continue
        for _ in range(epochs_per_stage):
            stream.extend(members[i] for i in rng.permutation(len(members)))
    return stream, report


def stage_boundaries(stream) -> list[int]:
    """Index of the first element of every band block, plus the stream length."""
    out = [0]
    for i in range(1, len(stream)):
        if stream[i].band != stream[i - 1].band:
            out.append(i)
    out.append(len(stream))
    return out


def manifest_lines(stream) -> str:
    keys = ("dataset_id", "origin_index", "band", "teacher_error", "perm_entropy")
    return "".join(json.dumps({k: asdict(p)[k] for k in keys}) + "\n" for p in stream)


def write_manifest(stream, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(manifest_lines(stream))
    return path
