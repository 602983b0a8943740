"""Episode state machine: prompt, query the policy, parse, validate, execute, score."""
from __future__ import annotations

import json
import re
import time
from dataclasses import asdict, dataclass, field
from typing import Protocol

import numpy as np

from .data import Window
from .errors import ModelError, ToolError, TransportError
from .memory import (
    FINAL_ANSWER,
    Memory,
    PredictionRecord,
    PromptBundle,
    PromptConfig,
    Stage,
    assemble_prompt,
    write_result,
)
from .models import ExternalRegistry, ForecastModelId, predict_time_series
from .reward import RewardBreakdown, RewardWeights, failed_reward, total_reward
from .toolkit import DIAGNOSTIC_TOOLS, PREDICT_TOOL, ToolResult, registry_names, run_tool

TRACE_SCHEMA_VERSION = 1

COMPLETED = "completed"
FAILED_FORMAT = "failed_format"
FAILED_TRANSPORT = "failed_transport"


@dataclass(frozen=True)
class ToolCall:
    name: str
    args: dict = field(default_factory=dict)
    raw_text: str = ""

    kind = "tool_call"

    def summary(self) -> dict:
        return {"kind": self.kind, "name": self.name, "arguments": self.args}


@dataclass(frozen=True)
class ModelCall:
    args: dict = field(default_factory=dict)
    raw_text: str = ""

    kind = "model_call"
    name = PREDICT_TOOL

    def model_id(self) -> ForecastModelId:
        return ForecastModelId.from_dict(self.args)

    def summary(self) -> dict:
        return {"kind": self.kind, "name": self.name, "arguments": self.args}


@dataclass(frozen=True, eq=False)
class FinalAnswer:
    think_text: str
    values: np.ndarray  # (rows, C_target)
    timestamps: tuple[str, ...] | None
    length_consistent: bool
    format_ok: bool
    format_issues: tuple[str, ...] = ()
    raw_text: str = ""

    kind = "final_answer"
    name = FINAL_ANSWER

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "rows": int(self.values.shape[0]),
            "length_consistent": self.length_consistent,
            "format_ok": self.format_ok,
            "format_issues": list(self.format_issues),
        }


Action = ToolCall | ModelCall | FinalAnswer


class ParseError(ValueError):
    """Raised when no valid action can be read; ``kind`` is one of
    ``no-action-found``, ``unknown-tool`` or ``malformed-answer``."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


@dataclass(frozen=True)
class Violation:
    rule: str
    action: str

    def __str__(self) -> str:
        return f"{self.rule} ({self.action})"


_THINK_ANSWER = re.compile(r"<think>(.*?)</think>\s*<answer>(.*?)</answer>", re.S)
_ANSWER = re.compile(r"<answer>(.*?)</answer>", re.S)
_TOOL_TAG = re.compile(r"<tool_call>(.*?)</tool_call>", re.S)
_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.S)


def _parse_timestamp(s: str):
    try:
        return np.datetime64(s.strip().replace(" ", "T"), "s")
    except ValueError:
        return None


def _parse_answer(body: str, horizon: int, n_channels: int, expected: np.ndarray | None):
    issues = []
    rows, stamps = [], []
    for line in (ln.strip() for ln in body.strip().splitlines()):
        if not line:
            continue
        fields = [f.strip() for f in line.split(",")]
        ts = None
        if len(fields) == n_channels + 1:
            ts = _parse_timestamp(fields[0])
            if ts is None:
                raise ParseError("malformed-answer", f"cannot parse timestamp {fields[0]!r}")
            fields = fields[1:]
        elif len(fields) != n_channels:
            raise ParseError("malformed-answer",
                             f"answer line has {len(fields)} fields, expected {n_channels} values")
        try:
            vals = [float(f) for f in fields]
        except ValueError:
            raise ParseError("malformed-answer", f"non-numeric value in answer line {line!r}") from None
        if not all(np.isfinite(vals)):
            raise ParseError("malformed-answer", "non-finite value in answer")
        rows.append(vals)
        stamps.append(ts)
    if not rows:
        raise ParseError("malformed-answer", "empty answer")
    n_ts = sum(t is not None for t in stamps)
    timestamps = None
    if n_ts:
        if n_ts != len(stamps):
            issues.append("timestamps given on some lines only")
        else:
            timestamps = tuple(str(t) for t in stamps)
            if expected is not None:
                k = min(len(stamps), expected.shape[0])
                if any(stamps[i] != expected[i] for i in range(k)):
                    issues.append("answer timestamps do not extend the history timeline")
    return np.array(rows, dtype=np.float64), timestamps, issues


def _json_candidates(text: str) -> list:
    t = text.strip()
    fenced = _FENCE.findall(t)
    for block in fenced or [t]:
        try:
            return [json.loads(block.strip())]
        except ValueError:
            pass
    tagged = _TOOL_TAG.findall(t)
    if tagged:
        out = []
        for block in tagged:
            try:
                out.append(json.loads(block.strip()))
            except ValueError:
                raise ParseError("no-action-found", "unparseable <tool_call> block") from None
        return out
    dec = json.JSONDecoder()
    for i, ch in enumerate(t):
        if ch in "{[":
            try:
                return [dec.raw_decode(t[i:])[0]]
            except ValueError:
                continue
    return []


def parse_action(raw_text: str, stage: Stage, horizon: int, *, n_channels: int = 1,
                 expected_timestamps: np.ndarray | None = None) -> tuple[Action, ...]:
    """Read the actions contained in one policy response.

    Tool calls are JSON objects ``{"name", "arguments"}`` (a JSON array, fenced
    block or ``<tool_call>`` tags for several); final answers use
    ``<think>..</think><answer>..</answer>``.
    """
    if not isinstance(raw_text, str):
        raise ParseError("no-action-found", "policy output is not text")
    if "<answer>" in raw_text or "<think>" in raw_text:
        m = _THINK_ANSWER.search(raw_text)
        issues = []
        if m is None:
            m2 = _ANSWER.search(raw_text)
            if m2 is None:
                raise ParseError("malformed-answer", "missing <answer>...</answer> section")
            issues.append("missing <think> section")
            think, body, span = "", m2.group(1), m2.span()
        else:
            think, body, span = m.group(1), m.group(2), m.span()
        if stage is Stage.REFLECT_OUTPUT and (raw_text[:span[0]].strip() or raw_text[span[1]:].strip()):
            issues.append("text outside <think>/<answer> tags")
        values, stamps, more = _parse_answer(body, horizon, n_channels, expected_timestamps)
        issues += more
        consistent = values.shape[0] == horizon
        return (FinalAnswer(think.strip(), values, stamps, consistent, not issues, tuple(issues), raw_text),)

    docs = _json_candidates(raw_text)
    calls = []
    for d in docs:
        calls.extend(d if isinstance(d, list) else [d])
    if not calls:
        raise ParseError("no-action-found", "no tool call or answer found")
    known = set(registry_names())
    actions = []
    for c in calls:
        if not isinstance(c, dict) or not isinstance(c.get("name"), str):
            raise ParseError("no-action-found", "tool call lacks a 'name' field")
        args = c.get("arguments", c.get("args", {}))
        if isinstance(args, str):
            try:
                args = json.loads(args) if args.strip() else {}
            except ValueError:
                raise ParseError("no-action-found", "tool arguments are not JSON") from None
        if not isinstance(args, dict):
            raise ParseError("no-action-found", "tool arguments must be an object")
        name = c["name"]
        if name not in known:
            raise ParseError("unknown-tool", f"unknown tool {name!r}")
        if name == PREDICT_TOOL:
            actions.append(ModelCall(args, raw_text))
        else:
            actions.append(ToolCall(name, args, raw_text))
    return tuple(actions)


_STAGE_OF = {"tool_call": Stage.FEATURE_EXTRACTION, "model_call": Stage.PREDICTION,
             "final_answer": Stage.REFLECT_OUTPUT}

_RULES = {
    ("model_call", Stage.FEATURE_EXTRACTION): "prediction at feature-extraction stage",
    ("final_answer", Stage.FEATURE_EXTRACTION): "final answer at feature-extraction stage",
    ("tool_call", Stage.PREDICTION): "feature tool at prediction stage",
    ("final_answer", Stage.PREDICTION): "final answer before any prediction",
    ("tool_call", Stage.REFLECT_OUTPUT): "feature tool at reflect/output stage",
    ("model_call", Stage.REFLECT_OUTPUT): "prediction at reflect/output stage",
}


def validate_action(action: Action, stage: Stage, allowed: tuple[str, ...] | None = None) -> Violation | None:
    if _STAGE_OF[action.kind] is not stage:
        return Violation(_RULES[(action.kind, stage)], action.name)
    if allowed is not None and action.name not in allowed:
        return Violation(f"{action.name} is disabled at {stage.label} stage", action.name)
    return None


@dataclass(frozen=True)
class PolicyReply:
    text: str
    completion_tokens: int | None = None


class Policy(Protocol):
    def respond(self, bundle: PromptBundle) -> PolicyReply: ...


@dataclass(frozen=True)
class EpisodeConfig:
    k_max: int = 3
    max_retries: int = 2
    prompt: PromptConfig = PromptConfig()
    weights: RewardWeights = RewardWeights()
    disable_feature_tools: bool = False
    disable_model_tools: bool = False
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "k_max": self.k_max,
            "max_retries": self.max_retries,
            "trunc_len": self.prompt.trunc_len,
            "decimals": self.prompt.decimals,
            "disable_feature_tools": self.disable_feature_tools,
            "disable_model_tools": self.disable_model_tools,
            "weights": self.weights.to_dict(),
            "seed": self.seed,
        }


@dataclass
class TurnRecord:
    turn: int
    stage: str
    prompt_digest: str
    raw_text: str | None = None
    actions: list = field(default_factory=list)
    executed: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    error: str | None = None
    completion_tokens: int | None = None
    elapsed_s: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        d = asdict(self)
        if not include_timing:
            d.pop("elapsed_s")
        return d


@dataclass
class EpisodeTrace:
    window: dict
    config: dict
    turns: list[TurnRecord]
    status: str
    failure_reason: str | None
    final_forecast: np.ndarray | None
    final_model: dict | None
    reward: RewardBreakdown | None
    memory: Memory

    @property
    def functional_turns(self) -> int:
        return sum(1 for t in self.turns if t.executed)

    @property
    def violation_count(self) -> int:
        return sum(len(t.violations) for t in self.turns)

    def to_dict(self, include_timing: bool = False) -> dict:
        return {
            "schema_version": TRACE_SCHEMA_VERSION,
            "window": self.window,
            "config": self.config,
            "turns": [t.to_dict(include_timing) for t in self.turns],
            "terminal": {"status": self.status, "failure_reason": self.failure_reason},
            "final_forecast": None if self.final_forecast is None else self.final_forecast.tolist(),
            "final_model": self.final_model,
            "reward": None if self.reward is None else self.reward.to_dict(),
            "memory": [json.loads(line) for line in self.memory.to_jsonl().splitlines()],
        }

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=1, allow_nan=False) + "\n"


FEATURES_DISABLED = ToolResult("feature_extraction_disabled", "all", {"reason": "feature tools disabled"}, 0)


def _execute(actions, window: Window, turn: int, registry: ExternalRegistry | None):
    """Run validated tool/model calls; all-or-nothing so a failure writes nothing."""
    results = []
    for a in actions:
        if isinstance(a, ToolCall):
            results.append(run_tool(a.name, window, a.args, turn))
        else:
            model = a.model_id()
            fc = predict_time_series(model, window, window.spec.horizon, registry)
            results.append(PredictionRecord(model, fc, turn))
    return results


def run_episode(window: Window, policy: Policy, config: EpisodeConfig = EpisodeConfig(),
                registry: ExternalRegistry | None = None) -> EpisodeTrace:
    disabled = ()
    memory = Memory()
    if config.disable_feature_tools:
        disabled += DIAGNOSTIC_TOOLS
        memory = write_result(memory, FEATURES_DISABLED)
    if config.disable_model_tools:
        disabled += (PREDICT_TOOL,)
    pcfg = PromptConfig(config.prompt.trunc_len, config.prompt.decimals, disabled)
    expected_ts = window.horizon_timestamps()
    n_targets = len(window.target_names)

    turns: list[TurnRecord] = []
    notices: tuple[str, ...] = ()
    retries = 0
    final: FinalAnswer | None = None
    status, reason = FAILED_FORMAT, "turn budget exhausted without a final answer"
    max_turns = config.k_max + config.max_retries

    for k in range(1, max_turns + 1):
        bundle = assemble_prompt(memory, window, pcfg, notices)
        notices = ()
        rec = TurnRecord(k, bundle.stage.label, bundle.digest())
        turns.append(rec)
        t0 = time.perf_counter()
        try:
            reply = policy.respond(bundle)
        except TransportError as exc:
            rec.error = "transport"
            rec.elapsed_s = time.perf_counter() - t0
            status, reason = FAILED_TRANSPORT, str(exc)
            break
        rec.raw_text = reply.text
        rec.completion_tokens = reply.completion_tokens
        failure = None
        try:
            actions = parse_action(reply.text, bundle.stage, window.spec.horizon,
                                   n_channels=n_targets, expected_timestamps=expected_ts)
        except ParseError as exc:
            rec.error = exc.kind
            failure = f"Your last response could not be parsed ({exc.kind}): {exc}"
            actions = ()
        rec.actions = [a.summary() for a in actions]
        if failure is None:
            viols = [v for a in actions if (v := validate_action(a, bundle.stage, bundle.allowed_actions))]
            if sum(isinstance(a, (ModelCall, FinalAnswer)) for a in actions) > 1 and not viols:
                viols.append(Violation("more than one prediction or answer in a turn", actions[0].name))
            if viols:
                rec.violations = [str(v) for v in viols]
                failure = "Action rejected: " + "; ".join(rec.violations) + \
                    f". Allowed now: {', '.join(bundle.allowed_actions) or 'none'}."
        if failure is None and isinstance(actions[0], FinalAnswer):
            final = actions[0]
            rec.executed = [FINAL_ANSWER]
            memory = write_result(memory, {"turn": k, "stage": bundle.stage.label, "action": FINAL_ANSWER,
                                           "status": "executed"})
            rec.elapsed_s = time.perf_counter() - t0
            status, reason = COMPLETED, None
            break
        if failure is None:
            try:
                results = _execute(actions, window, k, registry)
            except (ToolError, ModelError) as exc:
                rec.error = "execution"
                failure = f"Call failed: {type(exc).__name__}: {exc}"
            else:
                for a, r in zip(actions, results):
                    memory = write_result(memory, r)
                    rec.outputs.append(r.to_dict())
                rec.executed = [a.name for a in actions]
        memory = write_result(memory, {
            "turn": k, "stage": bundle.stage.label,
            "action": ",".join(a.name for a in actions) or None,
            "status": "executed" if failure is None else "rejected",
        })
        rec.elapsed_s = time.perf_counter() - t0
        if failure is not None:
            retries += 1
            if retries > config.max_retries:
                reason = f"retry budget exhausted: {failure}"
                break
            notices = (failure,)

    forecast_values = None
    reward = None
    if status == COMPLETED:
        forecast_values = final.values
        if window.target is not None:
            reward = total_reward(final.values, window.target, config.weights,
                                  period=window.spec.seasonal_period, format_ok=final.format_ok,
                                  response_tokens=turns[-1].completion_tokens)
    elif status == FAILED_FORMAT and window.target is not None:
        reward = failed_reward(config.weights, window.spec.horizon)
    preds = memory.prediction_results
    return EpisodeTrace(
        window=window.ref(),
        config=config.to_dict(),
        turns=turns,
        status=status,
        failure_reason=reason,
        final_forecast=forecast_values,
        final_model=preds[-1].model_id.to_dict() if preds else None,
        reward=reward,
        memory=memory,
    )


def audit_trace(trace: EpisodeTrace) -> list[str]:
    """Return every executed action that was not admissible at its turn's stage."""
    problems = []
    for t in trace.turns:
        stage = Stage[t.stage.upper()]
        for name in t.executed:
            kind = ("final_answer" if name == FINAL_ANSWER else
                    "model_call" if name == PREDICT_TOOL else "tool_call")
            if _STAGE_OF[kind] is not stage:
                problems.append(f"turn {t.turn}: {name} executed at {t.stage}")
        if t.executed and (t.violations or t.error):
            problems.append(f"turn {t.turn}: executed despite {t.violations or t.error}")
    return problems
