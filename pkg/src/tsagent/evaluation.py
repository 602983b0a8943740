"""Raw-scale metrics and the batch evaluation runner."""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import MultivariateSeries, Window, load_csv, make_window, split_lengths
from .errors import DataError
from .models import ExternalRegistry, ForecastModelId, forecast_channel
from .orchestrator import COMPLETED, FAILED_FORMAT, FAILED_TRANSPORT, EpisodeTrace, Policy, run_episode
from .policies import RemotePolicy, ScriptedPolicy
from .reward import RewardBreakdown

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
FALLBACK_MODEL = ForecastModelId.naive()
REWARD_MEAN_KEYS = ("accuracy", "trend", "seasonal", "turning", "format_ok", "answer_length_delta",
                    "length_penalty", "total")


def _pair(forecast, truth) -> tuple[np.ndarray, np.ndarray]:
    f = np.asarray(forecast, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if f.shape != t.shape:
        raise ValueError(f"shape mismatch: forecast {f.shape} vs truth {t.shape}")
    if f.size == 0:
        raise ValueError("empty forecast")
    return f, t


def mse(forecast, truth) -> float:
    f, t = _pair(forecast, truth)
    return float(np.mean((f - t) ** 2))


def mae(forecast, truth) -> float:
    f, t = _pair(forecast, truth)
    return float(np.mean(np.abs(f - t)))


def _mean(xs) -> float | None:
    xs = list(xs)
    return math.fsum(xs) / len(xs) if xs else None


@dataclass
class EpisodeScore:
    origin_index: int
    status: str
    mse: float | None
    mae: float | None
    effective_mse: float
    effective_mae: float
    reward: RewardBreakdown | None


@dataclass
class EvalReport:
    """Aggregate over a batch of episodes.

    ``mse``/``mae`` cover completed episodes only. ``effective_*`` additionally
    score failed episodes with a naive last-value forecast, so variants whose
    episodes all fail can still be ranked.
    """
    dataset: str
    lookback: int
    horizon: int
    n_windows: int
    completed: int
    failed_format: int
    failed_transport: int
    mse: float | None
    mae: float | None
    effective_mse: float
    effective_mae: float
    mean_reward: dict | None
    runtime: dict = field(default_factory=dict)  # kept out of the canonical JSON

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "dataset": self.dataset,
            "lookback": self.lookback,
            "horizon": self.horizon,
            "n_windows": self.n_windows,
            "counts": {"completed": self.completed, "failed_format": self.failed_format,
                       "failed_transport": self.failed_transport},
            "mse": self.mse,
            "mae": self.mae,
            "effective_mse": self.effective_mse,
            "effective_mae": self.effective_mae,
            "mean_reward": self.mean_reward,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, allow_nan=False) + "\n"

    def table(self) -> str:
        def num(v):
            return "n/a" if v is None else f"{v:.6g}"
        rows = [
            ("dataset", self.dataset),
            ("lookback/horizon", f"{self.lookback}/{self.horizon}"),
            ("windows", str(self.n_windows)),
            ("completed", str(self.completed)),
            ("failed_format", str(self.failed_format)),
            ("failed_transport", str(self.failed_transport)),
            ("MSE", num(self.mse)),
            ("MAE", num(self.mae)),
            ("MSE (with fallback)", num(self.effective_mse)),
            ("MAE (with fallback)", num(self.effective_mae)),
            ("mean reward", num((self.mean_reward or {}).get("total"))),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows) + "\n"


def fallback_forecast(window: Window) -> np.ndarray:
    hist = window.target_history
    cols = [forecast_channel(FALLBACK_MODEL, hist[:, j], window.spec.horizon)[0] for j in range(hist.shape[1])]
    return np.column_stack(cols)


def score_episode(window: Window, trace: EpisodeTrace) -> EpisodeScore:
    truth = window.target
    if trace.status == COMPLETED:
        m, a = mse(trace.final_forecast, truth), mae(trace.final_forecast, truth)
        em, ea = m, a
    else:
        m = a = None
        fb = fallback_forecast(window)
        em, ea = mse(fb, truth), mae(fb, truth)
    return EpisodeScore(int(window.origin_index), trace.status, m, a, em, ea, trace.reward)


def aggregate(scores: list[EpisodeScore], dataset: str, lookback: int, horizon: int) -> EvalReport:
    """Order-independent: every sum goes through fsum."""
    done = [s for s in scores if s.status == COMPLETED]
    rewards = [s.reward for s in scores if s.reward is not None]
    mean_reward = None
    if rewards:
        mean_reward = {k: _mean(float(getattr(r, k)) for r in rewards) for k in REWARD_MEAN_KEYS}
    return EvalReport(
        dataset=dataset,
        lookback=lookback,
        horizon=horizon,
        n_windows=len(scores),
        completed=len(done),
        failed_format=sum(s.status == FAILED_FORMAT for s in scores),
        failed_transport=sum(s.status == FAILED_TRANSPORT for s in scores),
        mse=_mean(s.mse for s in done),
        mae=_mean(s.mae for s in done),
        effective_mse=_mean(s.effective_mse for s in scores),
        effective_mae=_mean(s.effective_mae for s in scores),
        mean_reward=mean_reward,
    )


def load_series(config: RunConfig) -> MultivariateSeries:
    return load_csv(config.data_path, config.csv_schema, config["data.name"] or None)


def split_origins(n_rows: int, spec, ratios, which: str) -> list[int]:
    """Window origins whose horizon lies inside the chosen split.

    The lookback may reach back into the preceding split, so origins are
    absolute row indices into the full series.
    """
    a, b, _ = split_lengths(n_rows, ratios)
    lo, hi = {"train": (0, a), "val": (a, a + b), "test": (a + b, n_rows), "all": (0, n_rows)}[which]
    first = max(0, lo - spec.lookback)
    last = hi - spec.lookback - spec.horizon
    return list(range(first, last + 1, spec.stride)) if last >= first else []


def eval_windows(config: RunConfig, series: MultivariateSeries | None = None, which: str | None = None) -> list[Window]:
    """Windows of the configured split, thinned evenly to ``eval.max_windows``."""
    series = series if series is not None else load_series(config)
    which = which or config["data.eval_split"]
    spec = config.window_spec
    spec.check_seasonal()
    origins = split_origins(len(series), spec, config["data.split"], which)
    cap = config["eval.max_windows"]
    if cap is not None and len(origins) > cap:
        idx = np.unique(np.linspace(0, len(origins) - 1, cap).round().astype(int))
        origins = [origins[i] for i in idx]
    return [make_window(series, spec, o) for o in origins]


def make_policy(config: RunConfig) -> Policy:
    if config["policy"] == "remote":
        return RemotePolicy(config.chat_endpoint)
    return ScriptedPolicy(config.scripted_config)


def trace_filename(window: Window) -> str:
    return f"{window.dataset_id}_{window.origin_index:06d}.json"


@dataclass
class BatchResult:
    report: EvalReport
    traces: list[EpisodeTrace]
    windows: list[Window]
    scores: list[EpisodeScore]


def run_batch(config: RunConfig, out_dir: str | Path | None = None, policy: Policy | None = None,
              registry: ExternalRegistry | None = None, windows: list[Window] | None = None,
              write: bool = True) -> BatchResult:
    """One episode per evaluation window; writes traces, report and resolved config.

    Output layout under ``out_dir`` (default ``output.dir``)::

        config.resolved.cfg  report.json  report.txt  runtime.json  traces/<dataset>_<origin>.json
    """
    t0 = time.perf_counter()
    windows = windows if windows is not None else eval_windows(config)
    if not windows:
        raise DataError("no evaluation windows: the split is shorter than lookback + horizon")
    policy = policy or make_policy(config)
    registry = registry if registry is not None else config.registry()
    ecfg = config.episode_config
    workers = max(1, config["eval.workers"])

    def one(w):
        return run_episode(w, policy, ecfg, registry)

    if workers == 1:
        traces = [one(w) for w in windows]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(one, windows))
    scores = [score_episode(w, t) for w, t in zip(windows, traces)]
    spec = config.window_spec
    report = aggregate(scores, windows[0].dataset_id, spec.lookback, spec.horizon)
    elapsed = time.perf_counter() - t0
    report.runtime = {"wall_seconds": elapsed, "episodes_per_second": len(windows) / elapsed if elapsed else None,
                      "workers": workers}
    if write:
        out = Path(out_dir if out_dir is not None else config["output.dir"])
        (out / "traces").mkdir(parents=True, exist_ok=True)
        for w, t in zip(windows, traces):
            (out / "traces" / trace_filename(w)).write_text(t.to_json())
        (out / "config.resolved.cfg").write_text(config.to_text())
        (out / "report.json").write_text(report.to_json())
        (out / "report.txt").write_text(report.table())
        (out / "runtime.json").write_text(json.dumps(report.runtime, indent=1) + "\n")
    logger.info("batch finished: %d windows, %d completed", report.n_windows, report.completed)
    return BatchResult(report, traces, windows, scores)
