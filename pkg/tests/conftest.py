import os
import sys
from pathlib import Path

import numpy as np
import pytest

from tsagent.config import load_config
from tsagent.data import MultivariateSeries, WindowSpec, load_csv, make_window

FIXTURES = Path(__file__).resolve().parent / "fixtures"
sys.path.insert(0, str(FIXTURES))

import make_fixtures  # noqa: E402

GOLDEN_TRACE = FIXTURES / "golden_trace.json"
GOLDEN_ORIGIN = 480
UPDATE_GOLDEN = os.environ.get("TSAGENT_UPDATE_GOLDEN") == "1"


def series_of(values, names=None, start="2021-01-01T00:00:00", freq_s=3600, name="fx") -> MultivariateSeries:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 1:
        v = v.reshape(-1, 1)
    names = tuple(names or [f"c{j}" for j in range(v.shape[1])])
    ts = np.datetime64(start, "s") + np.arange(v.shape[0]) * np.timedelta64(freq_s, "s")
    return MultivariateSeries(ts, names, v, np.timedelta64(freq_s, "s"), name)


def window_of(history, target=None, period=24, names=None, targets=()):
    """Window whose history is ``history`` and whose target is ``target`` (or a
    one-step dummy when omitted)."""
    h = np.asarray(history, dtype=np.float64)
    h = h.reshape(-1, 1) if h.ndim == 1 else h
    if target is None:
        t = np.repeat(h[-1:], 1, axis=0)
    else:
        t = np.asarray(target, dtype=np.float64)
        t = t.reshape(-1, 1) if t.ndim == 1 else t
    s = series_of(np.vstack([h, t]), names)
    return make_window(s, WindowSpec(h.shape[0], t.shape[0], 1, period, tuple(targets)), 0)


@pytest.fixture(scope="session")
def seasonal_series():
    return load_csv(FIXTURES / "seasonal.csv", name="seasonal")


@pytest.fixture
def seasonal_config(tmp_path):
    return load_config(FIXTURES / "run.cfg", {"output.dir": str(tmp_path / "out")})


@pytest.fixture(scope="session")
def etth1_csv(tmp_path_factory):
    if os.environ.get("ETTH1_CSV"):
        return Path(os.environ["ETTH1_CSV"])
    return make_fixtures.write_etth1_like(tmp_path_factory.mktemp("data") / "ETTh1.csv")


@pytest.fixture(scope="session")
def epf_csv(tmp_path_factory):
    if os.environ.get("EPF_CSV"):
        return Path(os.environ["EPF_CSV"])
    return make_fixtures.write_epf_like(tmp_path_factory.mktemp("data") / "NP.csv")


def golden_window(series, config):
    return make_window(series, config.window_spec, GOLDEN_ORIGIN)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
