import json
import random

import numpy as np
import pytest

from conftest import GOLDEN_TRACE, UPDATE_GOLDEN, golden_window, window_of
from tsagent.errors import TransportError
from tsagent.memory import Stage
from tsagent.models import ExternalRegistry, ForecastModelId
from tsagent.orchestrator import (COMPLETED, FAILED_FORMAT, FAILED_TRANSPORT, EpisodeConfig, FinalAnswer, ModelCall,
                                  ParseError, PolicyReply, ToolCall, audit_trace, parse_action, run_episode,
                                  validate_action)
from tsagent.policies import ScriptedPolicy, format_answer
from tsagent.toolkit import DIAGNOSTIC_TOOLS


class Replay:
    """Policy returning canned texts in order and recording the bundles it saw."""

    def __init__(self, texts, tokens=None):
        self.texts = list(texts)
        self.tokens = tokens
        self.bundles = []

    def respond(self, bundle):
        self.bundles.append(bundle)
        return PolicyReply(self.texts[len(self.bundles) - 1], self.tokens)


def sine_window(L=96, H=4):
    t = np.arange(L + H)
    x = 5 + np.sin(2 * np.pi * t / 24)
    return window_of(x[:L], x[L:])


TOOL_TEXT = json.dumps({"name": "extract_basic_statistics", "arguments": {}})
PREDICT_TEXT = json.dumps({"name": "predict_time_series", "arguments": {"model": "seasonal_naive", "period": 24}})


def answer_text(w):
    return f"<think>ok</think><answer>\n{format_answer(w.target)}\n</answer>"


# parsing

def test_parse_single_and_multiple_tool_calls():
    (a,) = parse_action(TOOL_TEXT, Stage.FEATURE_EXTRACTION, 4)
    assert isinstance(a, ToolCall) and a.name == "extract_basic_statistics" and a.args == {}
    many = json.dumps([{"name": n, "arguments": {}} for n in DIAGNOSTIC_TOOLS[:3]])
    assert [x.name for x in parse_action(many, Stage.FEATURE_EXTRACTION, 4)] == list(DIAGNOSTIC_TOOLS[:3])
    tagged = "".join(f"<tool_call>{json.dumps({'name': n})}</tool_call>" for n in DIAGNOSTIC_TOOLS[:2])
    assert len(parse_action(tagged, Stage.FEATURE_EXTRACTION, 4)) == 2
    fenced = f"Sure.\n```json\n{PREDICT_TEXT}\n```"
    (m,) = parse_action(fenced, Stage.PREDICTION, 4)
    assert isinstance(m, ModelCall) and m.model_id() == ForecastModelId.seasonal_naive(24)


def test_parse_answer_length_consistency():
    text = "<think>t</think><answer>\n1.0\n2.0\n</answer>"
    (a,) = parse_action(text, Stage.REFLECT_OUTPUT, 2)
    assert isinstance(a, FinalAnswer) and a.length_consistent and a.format_ok
    assert a.values[:, 0].tolist() == [1.0, 2.0]
    (b,) = parse_action(text, Stage.REFLECT_OUTPUT, 3)
    assert not b.length_consistent and b.format_ok


def test_parse_answer_with_timestamps_and_issues():
    ts = np.datetime64("2021-01-01T05:00:00") + np.arange(2) * np.timedelta64(1, "h")
    good = "<think>x</think><answer>\n2021-01-01 05:00:00,1\n2021-01-01 06:00:00,2\n</answer>"
    (a,) = parse_action(good, Stage.REFLECT_OUTPUT, 2, expected_timestamps=ts)
    assert a.format_ok and a.timestamps == ("2021-01-01T05:00:00", "2021-01-01T06:00:00")
    (b,) = parse_action("preamble " + good, Stage.REFLECT_OUTPUT, 2, expected_timestamps=ts)
    assert not b.format_ok
    (c,) = parse_action("<answer>1\n2</answer>", Stage.REFLECT_OUTPUT, 2)
    assert "missing <think> section" in c.format_issues


@pytest.mark.parametrize("text,kind", [
    ("hello", "no-action-found"),
    ('{"name": "make_coffee", "arguments": {}}', "unknown-tool"),
    ("<think>a</think><answer>1,x</answer>", "malformed-answer"),
    ("<think>a</think><answer></answer>", "malformed-answer"),
    ("<think>only thinking</think>", "malformed-answer"),
    ('{"arguments": {}}', "no-action-found"),
])
def test_parse_errors(text, kind):
    with pytest.raises(ParseError) as exc:
        parse_action(text, Stage.FEATURE_EXTRACTION, 2)
    assert exc.value.kind == kind


def test_validate_action_rules():
    (m,) = parse_action(PREDICT_TEXT, Stage.FEATURE_EXTRACTION, 4)
    v = validate_action(m, Stage.FEATURE_EXTRACTION)
    assert v is not None and v.rule == "prediction at feature-extraction stage"
    (t,) = parse_action(TOOL_TEXT, Stage.PREDICTION, 4)
    assert validate_action(t, Stage.PREDICTION).rule == "feature tool at prediction stage"
    assert validate_action(t, Stage.FEATURE_EXTRACTION) is None
    assert validate_action(t, Stage.FEATURE_EXTRACTION, ("summarize_events",)) is not None
    assert validate_action(m, Stage.PREDICTION) is None


# episodes

def test_scripted_episode_three_functional_turns():
    w = sine_window()
    tr = run_episode(w, ScriptedPolicy())
    assert tr.status == COMPLETED and len(tr.turns) == 3 and tr.functional_turns == 3
    assert tr.violation_count == 0 and audit_trace(tr) == []
    assert [t.stage for t in tr.turns] == ["feature_extraction", "prediction", "reflect_output"]
    assert tr.final_model == {"model": "seasonal_naive", "period": 24}
    assert np.max(np.abs(tr.final_forecast - w.target)) < 1e-12


def test_garbage_policy_exhausts_retries():
    w = sine_window()
    tr = run_episode(w, Replay(["hello"] * 10))
    assert tr.status == FAILED_FORMAT and len(tr.turns) == 3
    assert tr.final_forecast is None and tr.reward.total == -1.0 and tr.reward.format_ok == 0.0
    assert "retry budget exhausted" in tr.failure_reason
    assert all(t.error == "no-action-found" and not t.executed for t in tr.turns)


def test_early_answer_is_violation_then_recovers():
    w = sine_window()
    pol = Replay([answer_text(w), TOOL_TEXT, PREDICT_TEXT, answer_text(w)])
    tr = run_episode(w, pol)
    assert tr.turns[0].violations == ["final answer at feature-extraction stage (final_answer)"]
    assert not tr.turns[0].executed
    assert "Action rejected" in pol.bundles[1].notices[0]
    assert pol.bundles[1].stage is Stage.FEATURE_EXTRACTION
    assert tr.status == COMPLETED and len(tr.turns) == 4 and tr.functional_turns == 3


def test_prediction_in_turn1_not_executed():
    w = sine_window()
    tr = run_episode(w, Replay([PREDICT_TEXT] * 3))
    assert tr.status == FAILED_FORMAT
    assert tr.memory.prediction_results == [] and tr.memory.analysis_history == []


def test_unreachable_external_model_reported_to_policy():
    w = sine_window()
    reg = ExternalRegistry()
    reg.register("gone", "http://127.0.0.1:9/")
    ext = json.dumps({"name": "predict_time_series", "arguments": {"model": "external", "name": "gone"}})
    pol = Replay([TOOL_TEXT, ext, PREDICT_TEXT, answer_text(w)])
    tr = run_episode(w, pol, registry=reg)
    assert tr.turns[1].error == "execution" and not tr.turns[1].executed
    assert pol.bundles[2].stage is Stage.PREDICTION
    assert pol.bundles[2].notices and pol.bundles[2].notices[0].startswith("Call failed")
    assert tr.status == COMPLETED


def test_transport_error_ends_episode():
    class Down:
        def respond(self, bundle):
            raise TransportError("HTTP 500")

    tr = run_episode(sine_window(), Down())
    assert tr.status == FAILED_TRANSPORT and len(tr.turns) == 1 and tr.reward is None


def test_length_mismatch_answer_completes_with_penalty():
    w = sine_window(H=4)
    short = f"<think>x</think><answer>\n{format_answer(w.target[:3])}\n</answer>"
    tr = run_episode(w, Replay([TOOL_TEXT, PREDICT_TEXT, short]))
    assert tr.status == COMPLETED and tr.reward.answer_length_delta == -1 and tr.reward.length_penalty > 0


def test_disabled_features_skip_turn1():
    w = sine_window()
    tr = run_episode(w, ScriptedPolicy(), EpisodeConfig(disable_feature_tools=True))
    assert tr.turns[0].stage == "prediction" and tr.status == COMPLETED and len(tr.turns) == 2


def test_disabled_models_never_complete():
    w = sine_window()
    tr = run_episode(w, ScriptedPolicy(), EpisodeConfig(disable_model_tools=True))
    assert tr.status == FAILED_FORMAT and tr.memory.prediction_results == []


def fuzz_texts(w):
    pool = [
        TOOL_TEXT, PREDICT_TEXT, answer_text(w), "hello", "", "{}", "[]", "<answer>1</answer>",
        json.dumps([{"name": "summarize_events"}, {"name": "predict_time_series", "arguments": {"model": "naive"}}]),
        json.dumps({"name": "predict_time_series", "arguments": {"model": "ar", "order": 2}}),
        json.dumps({"name": "predict_time_series", "arguments": {"model": "prophet"}}),
        json.dumps({"name": "diagnose_residuals", "arguments": {"baseline": {"model": "naive"}}}),
        json.dumps({"name": "diagnose_residuals", "arguments": {}}),
        '{"name": "extract_within_channel_dynamics"',
        "<think>t</think><answer>1\n2\n3\n4\n5\n6</answer>",
        "<think>t</think><answer>nan\n1\n2\n3</answer>",
    ]
    return pool


def test_fuzzed_policies_never_execute_inadmissible_actions():
    w = sine_window(L=48)
    pool = fuzz_texts(w)
    rng = random.Random(0)
    outputs = 0
    statuses = set()
    while outputs < 10_000:
        texts = [rng.choice(pool) for _ in range(5)]
        tr = run_episode(w, Replay(texts))
        outputs += len(tr.turns)
        assert 1 <= len(tr.turns) <= 5
        assert audit_trace(tr) == []
        statuses.add(tr.status)
        stages = [Stage[t.stage.upper()] for t in tr.turns]
        assert stages == sorted(stages)
    assert statuses == {COMPLETED, FAILED_FORMAT}


def test_episode_deterministic():
    w = sine_window()
    assert run_episode(w, ScriptedPolicy()).to_json() == run_episode(w, ScriptedPolicy()).to_json()


def test_golden_trace(seasonal_series, seasonal_config):
    w = golden_window(seasonal_series, seasonal_config)
    text = run_episode(w, ScriptedPolicy(), seasonal_config.episode_config).to_json()
    if UPDATE_GOLDEN:
        GOLDEN_TRACE.write_text(text)
    assert text == GOLDEN_TRACE.read_text()
