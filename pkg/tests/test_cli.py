import json
from pathlib import Path

import pytest

from conftest import FIXTURES
from tsagent.cli import main
from tsagent.stubs import StubServer, status_responder

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
RUN_CFG = str(FIXTURES / "run.cfg")


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_unknown_subcommand_and_flag(capsys):
    assert run(capsys, "bogus")[0] == 2
    code, _, err = run(capsys, "batch", "--no-such-flag")
    assert code == 2 and "usage" in err


def test_config_errors_exit_2(capsys, tmp_path):
    assert run(capsys, "ingest", "--config", str(tmp_path / "missing.cfg"))[0] == 2
    assert run(capsys, "ingest", "--config", RUN_CFG, "--set", "window.lookbak=3")[0] == 2
    assert run(capsys, "ingest", "--config", RUN_CFG, "--set", "noequals")[0] == 2


def test_data_errors_exit_3(capsys, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("date,a\n2020-01-01 01:00:00,1\n2020-01-01 00:00:00,2\n")
    assert run(capsys, "ingest", "--data", str(bad))[0] == 3
    assert run(capsys, "analyze", "--config", RUN_CFG, "--tool", "summarize_events", "--origin", "100000")[0] == 3


def test_ingest_etth1(capsys, etth1_csv):
    code, out, _ = run(capsys, "ingest", "--data", str(etth1_csv))
    doc = json.loads(out)
    assert code == 0 and doc["rows"] == 17_420 and doc["n_channels"] == 7 and doc["frequency_seconds"] == 3600


def test_analyze_prints_payload(capsys):
    code, out, _ = run(capsys, "analyze", "--config", RUN_CFG, "--tool", "extract_basic_statistics",
                       "--origin", "10", "--channel", "load")
    doc = json.loads(out)
    assert code == 0 and doc["tool_name"] == "extract_basic_statistics" and doc["channel_scope"] == "load"


def test_episode_writes_one_trace(capsys, tmp_path):
    out_dir = tmp_path / "ep"
    code, out, _ = run(capsys, "episode", "--policy", "scripted", "--config", RUN_CFG, "--out", str(out_dir))
    assert code == 0 and out.startswith("completed")
    traces = sorted(out_dir.glob("*.json"))
    assert len(traces) == 1 and (out_dir / "config.resolved.cfg").exists()
    assert json.loads(traces[0].read_text())["terminal"]["status"] == "completed"


def test_episode_transport_failure_exit_4(capsys, tmp_path):
    with StubServer(status_responder(500)) as srv:
        code, out, err = run(capsys, "episode", "--config", RUN_CFG, "--policy", "remote",
                             "--set", f"llm.endpoint={srv.url}", "--out", str(tmp_path))
    assert code == 4 and out.startswith("failed_transport") and "transport" in err


def test_batch_etth1_long_term_reports_mse_and_mae(capsys, tmp_path, etth1_csv):
    code, out, _ = run(capsys, "batch", "--config", str(CONFIGS / "etth1_long_term.cfg"), "--data", str(etth1_csv),
                       "--max-windows", "4", "--out", str(tmp_path))
    assert code == 0
    assert "MSE" in out and "MAE" in out and "96/96" in out
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["lookback"] == rep["horizon"] == 96 and rep["n_windows"] == 4
    assert rep["mse"] >= 0 and rep["mae"] >= 0
    assert "window.lookback = 96" in (tmp_path / "config.resolved.cfg").read_text()


def test_batch_epf_short_term(capsys, tmp_path, epf_csv):
    code, out, _ = run(capsys, "batch", "--config", str(CONFIGS / "epf_short_term.cfg"), "--data", str(epf_csv),
                       "--max-windows", "3", "--out", str(tmp_path))
    assert code == 0 and "168/24" in out


def test_curriculum_three_contiguous_blocks(capsys, tmp_path):
    code, _, _ = run(capsys, "curriculum", "--config", RUN_CFG, "--set", "eval.max_windows=30",
                     "--out", str(tmp_path))
    assert code == 0
    rows = [json.loads(line) for line in (tmp_path / "manifest.jsonl").read_text().splitlines()]
    bands = [r["band"] for r in rows]
    assert len(rows) == 30 and bands == sorted(bands) and set(bands) == {1, 2, 3}
    summary = json.loads((tmp_path / "curriculum.json").read_text())
    assert len(summary["stage_boundaries"]) == 4


def test_reward_command(capsys, tmp_path):
    f = tmp_path / "f.csv"
    f.write_text("value\n1\n2\n3\n4\n")
    code, out, _ = run(capsys, "reward", "--forecast", str(f), "--truth", str(f), "--period", "2")
    assert code == 0 and json.loads(out)["total"] == 1.0
    code, out, _ = run(capsys, "reward", "--forecast", str(f), "--truth", str(f), "--period", "2",
                       "--invalid-format")
    assert json.loads(out)["total"] <= 0.0


@pytest.mark.parametrize("flag", ["--disable-feature-tools", "--disable-model-tools"])
def test_ablation_flags_recorded(capsys, tmp_path, flag):
    run(capsys, "episode", "--config", RUN_CFG, flag, "--out", str(tmp_path))
    key = "ablation." + flag[2:].replace("-", "_")
    assert f"{key} = true" in (tmp_path / "config.resolved.cfg").read_text()
