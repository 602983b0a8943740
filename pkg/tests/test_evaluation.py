import csv
import json
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES
from tsagent.data import WindowSpec
from tsagent.errors import DataError
from tsagent.evaluation import EpisodeScore, aggregate, eval_windows, mae, mse, run_batch, split_origins
from tsagent.memory import Stage
from tsagent.models import ForecastModelId
from tsagent.orchestrator import COMPLETED, PolicyReply
from tsagent.policies import ScriptedPolicy


class NaivePolicy(ScriptedPolicy):
    """Scripted agent that always asks for the last-value forecaster."""

    def respond(self, bundle):
        if bundle.stage is Stage.PREDICTION:
            return PolicyReply(json.dumps({"name": "predict_time_series",
                                           "arguments": ForecastModelId.naive().to_dict()}))
        return super().respond(bundle)


def test_metric_examples():
    assert mse([1, 2], [1, 2]) == 0.0 and mae([1, 2], [1, 2]) == 0.0
    assert mse([2, 4], [1, 2]) == 2.5 and mae([2, 4], [1, 2]) == 1.5
    with pytest.raises(ValueError):
        mse([1, 2, 3], [1, 2])


def test_mae_below_root_mse():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        shape = (int(rng.integers(1, 50)), int(rng.integers(1, 4)))
        f, t = rng.normal(size=shape) * 10, rng.normal(size=shape)
        assert mae(f, t) <= math.sqrt(mse(f, t)) + 1e-12


def test_split_origins_hand_example():
    # 100 rows, 70/10/20: test rows 80..99; L=10, H=5 -> origins 70..85
    spec = WindowSpec(10, 5)
    assert split_origins(100, spec, (0.7, 0.1, 0.2), "test") == list(range(70, 86))
    assert split_origins(100, WindowSpec(10, 5, stride=4), (0.7, 0.1, 0.2), "val") == [60, 64]
    assert split_origins(100, WindowSpec(90, 20), (0.7, 0.1, 0.2), "test") == []


def test_eval_windows_thinning(seasonal_config):
    all_w = eval_windows(seasonal_config)
    few = eval_windows(seasonal_config.with_overrides({"eval.max_windows": "5"}))
    assert len(few) == 5 and few[0].origin_index == all_w[0].origin_index
    assert few[-1].origin_index == all_w[-1].origin_index


def test_scripted_beats_naive_policy(seasonal_config):
    full = run_batch(seasonal_config, write=False).report
    naive = run_batch(seasonal_config, policy=NaivePolicy(), write=False).report
    assert full.completed == naive.completed == full.n_windows
    assert full.mse < naive.mse


def test_model_tools_disabled_all_fail(seasonal_config):
    cfg = seasonal_config.with_overrides({"ablation.disable_model_tools": "true"})
    res = run_batch(cfg, write=False)
    rep = res.report
    assert rep.failed_format == rep.n_windows and rep.completed == 0 and rep.mse is None
    for tr in res.traces:
        first_bad = next(t for t in tr.turns if t.violations or t.error)
        assert first_bad.turn == 2 and tr.turns[0].executed


def test_counts_sum_to_windows(seasonal_config):
    rep = run_batch(seasonal_config, write=False).report
    assert rep.completed + rep.failed_format + rep.failed_transport == rep.n_windows
    assert rep.mse >= 0 and rep.mae >= 0


def test_report_byte_identical_across_runs(seasonal_config, tmp_path):
    run_batch(seasonal_config, tmp_path / "a")
    run_batch(seasonal_config.with_overrides({"eval.workers": "4"}), tmp_path / "b")
    for name in ("report.json", "report.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    ta = sorted((tmp_path / "a" / "traces").iterdir())
    tb = sorted((tmp_path / "b" / "traces").iterdir())
    assert [p.name for p in ta] == [p.name for p in tb]
    assert all(x.read_bytes() == y.read_bytes() for x, y in zip(ta, tb))


def test_outputs_layout(seasonal_config, tmp_path):
    run_batch(seasonal_config, tmp_path)
    names = {p.name for p in tmp_path.iterdir()}
    assert names == {"config.resolved.cfg", "report.json", "report.txt", "runtime.json", "traces"}
    assert "wall_seconds" in json.loads((tmp_path / "runtime.json").read_text())
    assert "runtime" not in json.loads((tmp_path / "report.json").read_text())
    assert "MSE" in (tmp_path / "report.txt").read_text() and "MAE" in (tmp_path / "report.txt").read_text()


def read_raw_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0][1:], [[float(v) for v in r[1:]] for r in rows[1:]]


def test_trace_replay_oracle(seasonal_config, tmp_path):
    rep = run_batch(seasonal_config, tmp_path).report
    _, rows = read_raw_csv(FIXTURES / "seasonal.csv")
    sq, ab, n = [], [], 0
    for p in sorted((tmp_path / "traces").iterdir()):
        tr = json.loads(p.read_text())
        if tr["terminal"]["status"] != COMPLETED:
            continue
        o, L, H = tr["window"]["origin_index"], tr["window"]["lookback"], tr["window"]["horizon"]
        truth = rows[o + L:o + L + H]
        ep_sq = [(f - t) ** 2 for fr, tr_ in zip(tr["final_forecast"], truth) for f, t in zip(fr, tr_)]
        ep_ab = [abs(f - t) for fr, tr_ in zip(tr["final_forecast"], truth) for f, t in zip(fr, tr_)]
        sq.append(math.fsum(ep_sq) / len(ep_sq))
        ab.append(math.fsum(ep_ab) / len(ep_ab))
        n += 1
    assert n == rep.completed
    assert abs(math.fsum(sq) / n - rep.mse) <= 1e-12 * max(1.0, rep.mse)
    assert abs(math.fsum(ab) / n - rep.mae) <= 1e-12 * max(1.0, rep.mae)


def test_aggregation_order_independent(seasonal_config):
    res = run_batch(seasonal_config, write=False)
    want = res.report.to_json()
    rng = random.Random(0)
    for _ in range(20):
        s = list(res.scores)
        rng.shuffle(s)
        assert aggregate(s, "seasonal", 96, 24).to_json() == want


def test_reward_toggle_changes_only_rewards(seasonal_config):
    cfg = seasonal_config.with_overrides({"eval.max_windows": "20"})
    a = run_batch(cfg, write=False)
    b = run_batch(cfg.with_overrides({"reward.ablate": "turn"}), write=False)
    differ = 0
    for x, y in zip(a.traces, b.traces):
        dx, dy = x.to_dict(), y.to_dict()
        assert dx["turns"] == dy["turns"] and dx["final_forecast"] == dy["final_forecast"]
        assert dx["memory"] == dy["memory"]
        differ += dx["reward"]["total"] != dy["reward"]["total"]
    assert differ > 0
    assert a.report.mse == b.report.mse


def test_no_windows_is_data_error(seasonal_config):
    cfg = seasonal_config.with_overrides({"window.lookback": "600", "window.horizon": "200"})
    with pytest.raises(DataError):
        run_batch(cfg, write=False)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=40))
def test_mean_of_completed_only(vals):
    scores = [EpisodeScore(i, COMPLETED, v, v, v, v, None) for i, v in enumerate(vals)]
    scores.append(EpisodeScore(99, "failed_format", None, None, 1e6, 1e6, None))
    rep = aggregate(scores, "d", 1, 1)
    assert rep.completed == len(vals) and rep.failed_format == 1
    assert rep.mse == pytest.approx(math.fsum(vals) / len(vals), rel=1e-12, abs=1e-300)
    assert rep.effective_mse > rep.mse or rep.mse == rep.effective_mse == 1e6
