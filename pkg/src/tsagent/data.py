"""Series ingestion, windowing, normalization and splits.

Missing observations are stored as NaN in ``MultivariateSeries.values`` and are
never imputed; :meth:`MultivariateSeries.missing_positions` reports them.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

MISSING = float("nan")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MultivariateSeries:
    timestamps: np.ndarray  # datetime64[s]
    channel_names: tuple[str, ...]
    values: np.ndarray  # (T, C) float64, NaN marks a missing cell
    frequency: np.timedelta64
    name: str = "series"

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[s]")
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals.reshape(-1, 1)
        names = tuple(str(c) for c in self.channel_names)
        freq = np.timedelta64(self.frequency, "s")
        if vals.shape[0] != ts.shape[0]:
            raise DataError(f"{vals.shape[0]} value rows but {ts.shape[0]} timestamps")
        if vals.shape[1] != len(names):
            raise DataError(f"{vals.shape[1]} value columns but {len(names)} channel names")
        if freq <= np.timedelta64(0, "s"):
            raise DataError("frequency must be positive")
        if ts.shape[0] > 1:
            steps = np.diff(ts)
            if np.any(steps != freq):
                bad = int(np.flatnonzero(steps != freq)[0]) + 1
                raise DataError(
                    f"irregular timestamp spacing at row {bad}: expected {freq}, "
                    f"got {steps[bad - 1]}"
                )
        object.__setattr__(self, "timestamps", _frozen(ts))
        object.__setattr__(self, "values", _frozen(vals))
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(self, "frequency", freq)

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_channels(self) -> int:
        return len(self.channel_names)

    def missing_positions(self) -> list[tuple[int, str]]:
        rows, cols = np.nonzero(np.isnan(self.values))
        return [(int(r), self.channel_names[c]) for r, c in zip(rows, cols)]

    def channel_index(self, name: str) -> int:
        try:
            return self.channel_names.index(name)
        except ValueError:
            raise DataError(f"unknown channel {name!r}") from None

    def slice(self, start: int, stop: int) -> "MultivariateSeries":
        return MultivariateSeries(
            self.timestamps[start:stop], self.channel_names,
            self.values[start:stop], self.frequency, self.name,
        )

    def to_json(self) -> str:
        """Fixture layout: ``timestamps`` (ISO strings), ``channels``,
        ``values`` (row-major, ``null`` for missing) and ``frequency`` in seconds."""
        doc = {
            "timestamps": [str(t) for t in self.timestamps],
            "channels": list(self.channel_names),
            "values": [[None if math.isnan(v) else float(v) for v in row] for row in self.values.tolist()],
            "frequency": int(self.frequency / np.timedelta64(1, "s")),
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str, name: str = "series") -> "MultivariateSeries":
        doc = json.loads(text)
        values = np.array(
            [[MISSING if v is None else float(v) for v in row] for row in doc["values"]],
            dtype=np.float64,
        ).reshape(len(doc["timestamps"]), len(doc["channels"]))
        return cls(
            np.array(doc["timestamps"], dtype="datetime64[s]"),
            tuple(doc["channels"]),
            values,
            np.timedelta64(int(doc["frequency"]), "s"),
            name,
        )


@dataclass(frozen=True)
class CsvSchema:
    timestamp_column: str = "date"
    value_columns: tuple[str, ...] | None = None  # None: every non-timestamp column
    frequency: str | None = None  # e.g. "1h", "15min"; inferred when None


_UNITS = {"s": 1, "sec": 1, "second": 1, "min": 60, "minute": 60, "t": 60,
          "h": 3600, "hour": 3600, "d": 86400, "day": 86400}


def parse_frequency(text: str) -> np.timedelta64:
    m = re.fullmatch(r"\s*(\d*)\s*([A-Za-z]+)\s*", text)
    unit = m.group(2).lower() if m else ""
    if unit not in _UNITS and unit.endswith("s"):
        unit = unit[:-1]
    if unit not in _UNITS:
        raise DataError(f"cannot parse frequency {text!r}")
    return np.timedelta64(int(m.group(1) or 1) * _UNITS[unit], "s")


def _parse_timestamp(raw: str, row: int) -> np.datetime64:
    try:
        return np.datetime64(raw.strip().replace(" ", "T"), "s")
    except ValueError:
        raise DataError(f"row {row}: cannot parse timestamp {raw!r}") from None


def load_csv(path: str | Path, schema: CsvSchema = CsvSchema(), name: str | None = None) -> MultivariateSeries:
    """Read a comma-separated file with a header row into a series.

    Malformed numeric cells become missing values; their positions are logged and
    available through ``missing_positions()`` on the result.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8-sig") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    if not rows or not rows[0]:
        raise DataError(f"{path}: zero value columns/rows")
    header = [h.strip() for h in rows[0]]
    body = [r + [""] * (len(header) - len(r)) for r in rows[1:] if any(c.strip() for c in r)]
    if schema.timestamp_column not in header:
        raise DataError(f"{path}: timestamp column {schema.timestamp_column!r} not in header")
    ts_col = header.index(schema.timestamp_column)
    if schema.value_columns is None:
        value_cols = [h for i, h in enumerate(header) if i != ts_col]
    else:
        value_cols = list(schema.value_columns)
        for c in value_cols:
            if c not in header:
                raise DataError(f"{path}: value column {c!r} not in header")
    if not value_cols or not body:
        raise DataError(f"{path}: zero value columns/rows")

    col_idx = [header.index(c) for c in value_cols]
    try:
        stamps = np.array([r[ts_col].strip().replace(" ", "T") for r in body], dtype="datetime64[s]")
    except ValueError:
        stamps = np.array([_parse_timestamp(r[ts_col], i + 2) for i, r in enumerate(body)])
    values = np.empty((len(body), len(col_idx)), dtype=np.float64)
    bad_cells = []
    for i, rec in enumerate(body):
        for j, k in enumerate(col_idx):
            cell = rec[k].strip()
            try:
                v = float(cell)
                if not math.isfinite(v):
                    raise ValueError
            except ValueError:
                v = MISSING
                bad_cells.append((i, value_cols[j]))
            values[i, j] = v

    if len(stamps) > 1:
        steps = np.diff(stamps)
        if np.any(steps <= np.timedelta64(0, "s")):
            bad = int(np.flatnonzero(steps <= np.timedelta64(0, "s"))[0]) + 1
            raise DataError(f"{path}: timestamps not strictly increasing at data row {bad}")
    if schema.frequency is not None:
        freq = parse_frequency(schema.frequency)
    elif len(stamps) > 1:
        freq = stamps[1] - stamps[0]
    else:
        raise DataError(f"{path}: cannot infer frequency from a single row")

    if bad_cells:
        logger.warning("%s: %d missing/malformed cells, first at %s", path, len(bad_cells), bad_cells[0])
    return MultivariateSeries(stamps, tuple(value_cols), values, freq, name or path.stem)


@dataclass(frozen=True)
class WindowSpec:
    lookback: int
    horizon: int
    stride: int = 1
    seasonal_period: int = 24
    target_channels: tuple[str, ...] = ()  # empty: all channels

    def __post_init__(self):
        for f in ("lookback", "horizon", "stride", "seasonal_period"):
            v = getattr(self, f)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise DataError(f"WindowSpec.{f} must be a positive integer, got {v!r}")
        object.__setattr__(self, "target_channels", tuple(self.target_channels))

    def check_seasonal(self) -> None:
        if self.lookback < self.seasonal_period:
            raise DataError(
                f"lookback {self.lookback} shorter than seasonal period {self.seasonal_period}"
            )


@dataclass(frozen=True, eq=False)
class Window:
    history: np.ndarray  # (L, C)
    target: np.ndarray | None  # (H, C_target)
    origin_index: int
    spec: WindowSpec
    channel_names: tuple[str, ...]
    target_names: tuple[str, ...]
    timestamps: np.ndarray  # history timestamps, length L
    frequency: np.timedelta64
    context: np.ndarray | None = None
    dataset_id: str = "series"

    def __post_init__(self):
        if self.history.shape[0] != self.spec.lookback:
            raise DataError("history length does not match lookback")
        if self.target is not None and self.target.shape[0] != self.spec.horizon:
            raise DataError("target length does not match horizon")
        for f in ("history", "target", "context", "timestamps"):
            a = getattr(self, f)
            if a is not None:
                object.__setattr__(self, f, _frozen(a))

    @property
    def target_history(self) -> np.ndarray:
        """History restricted to the target channels, shape (L, C_target)."""
        idx = [self.channel_names.index(c) for c in self.target_names]
        return self.history[:, idx]

    def horizon_timestamps(self, horizon: int | None = None) -> np.ndarray:
        h = self.spec.horizon if horizon is None else horizon
        return self.timestamps[-1] + self.frequency * np.arange(1, h + 1)

    def ref(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "origin_index": int(self.origin_index),
            "lookback": self.spec.lookback,
            "horizon": self.spec.horizon,
        }


def make_window(series: MultivariateSeries, spec: WindowSpec, origin: int, with_target: bool = True) -> Window:
    targets = spec.target_channels or series.channel_names
    tidx = [series.channel_index(c) for c in targets]
    L, H = spec.lookback, spec.horizon
    history = series.values[origin:origin + L]
    target = series.values[origin + L:origin + L + H][:, tidx] if with_target else None
    return Window(
        history=history,
        target=target,
        origin_index=origin,
        spec=spec,
        channel_names=series.channel_names,
        target_names=tuple(targets),
        timestamps=series.timestamps[origin:origin + L],
        frequency=series.frequency,
        dataset_id=series.name,
    )


def window_count(n_rows: int, spec: WindowSpec) -> int:
    span = spec.lookback + spec.horizon
    if n_rows < span:
        return 0
    return (n_rows - span) // spec.stride + 1


def make_windows(series: MultivariateSeries, spec: WindowSpec) -> list[Window]:
    need = spec.lookback + spec.horizon
    if len(series) < need:
        raise DataError(
            f"series of length {len(series)} too short: needs at least {need} rows "
            f"(lookback {spec.lookback} + horizon {spec.horizon})"
        )
    return [make_window(series, spec, i * spec.stride) for i in range(window_count(len(series), spec))]


@dataclass(frozen=True, eq=False)
class ZScoreStats:
    mean: np.ndarray
    std: np.ndarray  # constant channels carry 1.0 here
    constant: tuple[bool, ...] = field(default=())


def zscore(series: MultivariateSeries | np.ndarray, stats: ZScoreStats | None = None, tol: float = 1e-12):
    """Per-channel standardization with population std.

    Returns ``(normalized, stats)``; the normalized object has the same type as the
    input. Channels whose std is below ``tol`` are divided by 1 and flagged.
    """
    raw = series.values if isinstance(series, MultivariateSeries) else np.asarray(series, dtype=np.float64)
    arr = raw.reshape(-1, 1) if raw.ndim == 1 else raw
    if stats is None:
        mean = np.nanmean(arr, axis=0) if arr.shape[0] else np.zeros(arr.shape[1])
        std = np.nanstd(arr, axis=0) if arr.shape[0] else np.zeros(arr.shape[1])
        constant = tuple(bool(s < tol) for s in std)
        std = np.where(std < tol, 1.0, std)
        stats = ZScoreStats(mean, std, constant)
        if any(constant):
            logger.info("zscore: constant channels flagged at columns %s",
                        [i for i, c in enumerate(constant) if c])
    out = (arr - stats.mean) / stats.std
    if raw.ndim == 1:
        out = out.ravel()
    if isinstance(series, MultivariateSeries):
        out = MultivariateSeries(series.timestamps, series.channel_names, out, series.frequency, series.name)
    return out, stats


def denormalize(normalized: MultivariateSeries | np.ndarray, stats: ZScoreStats):
    if isinstance(normalized, MultivariateSeries):
        vals = normalized.values * stats.std + stats.mean
        return MultivariateSeries(normalized.timestamps, normalized.channel_names, vals,
                                  normalized.frequency, normalized.name)
    arr = np.asarray(normalized, dtype=np.float64)
    if arr.ndim == 1:
        return (arr.reshape(-1, 1) * stats.std + stats.mean).ravel()
    return arr * stats.std + stats.mean


def split_lengths(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must be three non-negative numbers summing to 1, got {tuple(ratios)}")
    n_train = int(math.floor(n * ratios[0] + 1e-9))
    n_val = int(math.floor(n * ratios[1] + 1e-9))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def split(series: MultivariateSeries, ratios: Sequence[float] = (0.7, 0.1, 0.2)):
    """Contiguous train/val/test split; the test part absorbs rounding remainders."""
    a, b, _ = split_lengths(len(series), ratios)
    return series.slice(0, a), series.slice(a, a + b), series.slice(a + b, len(series))
