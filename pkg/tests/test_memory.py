import json

import numpy as np
import pytest

from conftest import window_of
from tsagent.memory import (FINAL_ANSWER, STAGE_ACTIONS, Memory, MemoryStateError, PredictionRecord, PromptConfig,
                            Stage, allowed_actions, assemble_prompt, detect_stage, format_matrix, write_result)
from tsagent.models import ForecastModelId, predict_time_series
from tsagent.toolkit import DIAGNOSTIC_TOOLS, PREDICT_TOOL, ToolResult, run_tool


def seasonal_window(L=96, H=24):
    t = np.arange(L + H)
    x = 10 + np.sin(2 * np.pi * t / 24)
    return window_of(x[:L], x[L:])


def analysis(w):
    return run_tool("extract_basic_statistics", w, {}, 1)


def prediction(w):
    m = ForecastModelId.seasonal_naive(24)
    return PredictionRecord(m, predict_time_series(m, w, w.spec.horizon), 2)


def test_detect_stage_all_combinations():
    w = seasonal_window()
    a, p = analysis(w), prediction(w)
    assert detect_stage(Memory()) is Stage.FEATURE_EXTRACTION
    assert detect_stage(Memory((a,))) is Stage.PREDICTION
    assert detect_stage(Memory((a, p))) is Stage.REFLECT_OUTPUT
    with pytest.raises(MemoryStateError):
        detect_stage(Memory((p,)))


def test_action_log_entries_do_not_change_stage():
    m = write_result(Memory(), {"turn": 1, "stage": "feature_extraction", "action": None, "status": "rejected"})
    assert detect_stage(m) is Stage.FEATURE_EXTRACTION


def test_write_result_appends_in_order_and_is_persistent():
    w = seasonal_window()
    a, p = analysis(w), prediction(w)
    m0 = Memory()
    m1 = write_result(m0, a)
    m2 = write_result(m1, p)
    assert m0.entries == () and m1.entries == (a,) and m2.entries == (a, p)
    assert m2.analysis_history == [a] and m2.prediction_results == [p]
    with pytest.raises(TypeError):
        write_result(m2, "loose text")


def test_jsonl_grows_by_suffix_only():
    w = seasonal_window()
    m = Memory()
    prev = m.to_jsonl()
    for e in (analysis(w), {"turn": 1, "stage": "x", "action": "y", "status": "executed"}, prediction(w)):
        m = write_result(m, e)
        cur = m.to_jsonl()
        assert cur.startswith(prev) and cur.count("\n") == prev.count("\n") + 1
        prev = cur
    kinds = [json.loads(line)["kind"] for line in prev.splitlines()]
    assert kinds == ["analysis", "action", "prediction"]


def test_turn1_bundle():
    w = seasonal_window()
    b = assemble_prompt(Memory(), w)
    assert b.stage is Stage.FEATURE_EXTRACTION
    assert b.allowed_actions == DIAGNOSTIC_TOOLS and len(b.allowed_actions) == 5
    assert b.injected_analysis is None and b.injected_predictions is None
    assert b.history_view.shape[0] == 96 and b.truncation_note is None
    text = b.render()
    assert "Prediction Results" not in text and "Analysis History" not in text


def test_turn2_bundle_carries_analysis_only():
    w = seasonal_window()
    a = analysis(w)
    b = assemble_prompt(Memory((a,)), w)
    assert b.allowed_actions == (PREDICT_TOOL,)
    assert b.analysis() == [{"kind": "analysis", **a.to_dict()}]
    assert b.injected_predictions is None


@pytest.mark.parametrize("L", [24, 48, 96, 336])
def test_turn3_history_truncated(L):
    w = seasonal_window(L)
    b = assemble_prompt(Memory((analysis(w), prediction(w))), w)
    assert b.history_view.shape[0] == min(L, 48)
    assert np.array_equal(b.history_view, w.history[-min(L, 48):])
    assert (b.truncation_note is not None) == (L > 48)
    assert b.allowed_actions == (FINAL_ANSWER,)
    assert len(b.predictions()) == 1


def test_truncation_length_configurable():
    w = seasonal_window()
    b = assemble_prompt(Memory((analysis(w), prediction(w))), w, PromptConfig(trunc_len=10))
    assert b.history_view.shape[0] == 10 and b.history_start == 86
    assert b.first_timestamp == str(w.timestamps[86])


def test_prompt_assembly_deterministic():
    w = seasonal_window()
    m = Memory((analysis(w), prediction(w)))
    for mem in (Memory(), Memory(m.entries[:1]), m):
        a, b = assemble_prompt(mem, w), assemble_prompt(mem, w)
        assert a.to_json() == b.to_json() and a.render() == b.render() and a.digest() == b.digest()


def test_stage_action_sets_disjoint():
    sets = [set(v) for v in STAGE_ACTIONS.values()]
    assert all(not (x & y) for i, x in enumerate(sets) for y in sets[i + 1:])
    assert allowed_actions(Stage.FEATURE_EXTRACTION, DIAGNOSTIC_TOOLS) == ()


def test_prompt_history_non_increasing_across_stages():
    w = seasonal_window(192)
    mems = [Memory(), Memory((analysis(w),)), Memory((analysis(w), prediction(w)))]
    sizes = [assemble_prompt(m, w).history_view.size for m in mems]
    assert sizes[0] >= sizes[1] >= sizes[2]


def test_format_matrix():
    assert format_matrix(np.array([[1.0, np.nan], [2.5, -3.0]]), 2) == "1.00,NaN\n2.50,-3.00"


def test_tool_result_needs_no_prompt_state():
    r = ToolResult("extract_data_quality", "all", {"channels": {}}, 1)
    assert detect_stage(Memory((r,))) is Stage.PREDICTION
