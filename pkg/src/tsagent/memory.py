"""Episode memory, stage detection and stage-aware prompt assembly."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .data import Window
from .models import Forecast, ForecastModelId
from .toolkit import DIAGNOSTIC_TOOLS, PREDICT_TOOL, ToolResult

FINAL_ANSWER = "final_answer"


class Stage(IntEnum):
    FEATURE_EXTRACTION = 1
    PREDICTION = 2
    REFLECT_OUTPUT = 3

    @property
    def label(self) -> str:
        return self.name.lower()


STAGE_ACTIONS = {
    Stage.FEATURE_EXTRACTION: DIAGNOSTIC_TOOLS,
    Stage.PREDICTION: (PREDICT_TOOL,),
    Stage.REFLECT_OUTPUT: (FINAL_ANSWER,),
}


class MemoryStateError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionRecord:
    model_id: ForecastModelId
    forecast: Forecast
    turn: int

    def to_dict(self) -> dict:
        return {"turn": self.turn, **self.forecast.to_dict()}


@dataclass(frozen=True)
class Memory:
    """Append-only record of one episode. ``write_result`` returns a new Memory."""

    entries: tuple = ()

    @property
    def analysis_history(self) -> list[ToolResult]:
        return [e for e in self.entries if isinstance(e, ToolResult)]

    @property
    def prediction_results(self) -> list[PredictionRecord]:
        return [e for e in self.entries if isinstance(e, PredictionRecord)]

    @property
    def action_log(self) -> list[dict]:
        return [e for e in self.entries if isinstance(e, dict)]

    def to_jsonl(self) -> str:
        return "".join(_entry_line(e) + "\n" for e in self.entries)


def _entry_line(e) -> str:
    if isinstance(e, ToolResult):
        doc = {"kind": "analysis", **e.to_dict()}
    elif isinstance(e, PredictionRecord):
        doc = {"kind": "prediction", **e.to_dict()}
    else:
        doc = {"kind": "action", **e}
    return json.dumps(doc, allow_nan=False)


def write_result(memory: Memory, entry: ToolResult | PredictionRecord | dict) -> Memory:
    if not isinstance(entry, (ToolResult, PredictionRecord, dict)):
        raise TypeError(f"cannot store {type(entry).__name__} in memory")
    return Memory(memory.entries + (entry,))


def compact(memory: Memory) -> Memory:
    """Hook for summarizing stale entries; tool payloads are already compact, so
    this currently returns the memory unchanged."""
    return memory


def detect_stage(memory: Memory) -> Stage:
    has_analysis = any(isinstance(e, ToolResult) for e in memory.entries)
    has_pred = any(isinstance(e, PredictionRecord) for e in memory.entries)
    if has_pred and not has_analysis:
        raise MemoryStateError("prediction results without analysis history")
    if not has_analysis:
        return Stage.FEATURE_EXTRACTION
    return Stage.REFLECT_OUTPUT if has_pred else Stage.PREDICTION


@dataclass(frozen=True)
class PromptConfig:
    trunc_len: int = 48
    decimals: int = 4
    disabled_actions: tuple[str, ...] = ()


_CONTRACTS = {
    Stage.FEATURE_EXTRACTION: (
        "Respond with one or more tool calls and nothing else. Each call is a JSON object "
        '{"name": <tool>, "arguments": {...}}; several calls go in a JSON array. '
        "Prediction functions are not available in this turn."
    ),
    Stage.PREDICTION: (
        'Respond with exactly one JSON call {"name": "predict_time_series", "arguments": '
        '{"model": <name>, ...}} and nothing else.'
    ),
    Stage.REFLECT_OUTPUT: (
        "Respond with ONLY <think>...</think> followed by <answer>...</answer>, no other text. "
        "The answer holds one line per horizon step: either 'timestamp,v1,...' or 'v1,...' "
        "with one value per target channel."
    ),
}


@dataclass(frozen=True, eq=False)
class PromptBundle:
    stage: Stage
    history_view: np.ndarray
    history_start: int  # index of the first shown row within the window history
    truncation_note: str | None
    channel_names: tuple[str, ...]
    target_names: tuple[str, ...]
    horizon: int
    first_timestamp: str
    frequency_seconds: int
    seasonal_period: int
    injected_analysis: str | None
    injected_predictions: str | None
    allowed_actions: tuple[str, ...]
    output_contract: str
    notices: tuple[str, ...] = ()
    decimals: int = 4

    def to_dict(self) -> dict:
        return {
            "stage": self.stage.label,
            "channels": list(self.channel_names),
            "targets": list(self.target_names),
            "horizon": self.horizon,
            "first_timestamp": self.first_timestamp,
            "frequency_seconds": self.frequency_seconds,
            "seasonal_period": self.seasonal_period,
            "history_start": self.history_start,
            "history": format_matrix(self.history_view, self.decimals),
            "truncation_note": self.truncation_note,
            "analysis": self.injected_analysis,
            "predictions": self.injected_predictions,
            "allowed_actions": list(self.allowed_actions),
            "output_contract": self.output_contract,
            "notices": list(self.notices),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), allow_nan=False)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def analysis(self) -> list[dict]:
        return [json.loads(line) for line in (self.injected_analysis or "").splitlines() if line]

    def predictions(self) -> list[dict]:
        return [json.loads(line) for line in (self.injected_predictions or "").splitlines() if line]

    def render(self) -> str:
        """Plain-text prompt handed to language-model policies."""
        parts = [
            f"## Stage: {self.stage.label}",
            f"Target channels: {', '.join(self.target_names)}; forecast horizon: {self.horizon} steps; "
            f"sampling interval: {self.frequency_seconds} s; seasonal period: {self.seasonal_period} steps.",
            f"## History ({self.history_view.shape[0]} steps, columns: {', '.join(self.channel_names)}, "
            f"first timestamp {self.first_timestamp})",
        ]
        if self.truncation_note:
            parts.append(self.truncation_note)
        parts.append(format_matrix(self.history_view, self.decimals))
        if self.injected_analysis is not None:
            parts += ["## Analysis History", self.injected_analysis.rstrip("\n")]
        if self.injected_predictions is not None:
            parts += ["## Prediction Results", self.injected_predictions.rstrip("\n")]
        if self.notices:
            parts += ["## Notices"] + list(self.notices)
        parts += ["## Allowed actions", ", ".join(self.allowed_actions) or "(none)",
                  "## Output format", self.output_contract]
        return "\n".join(parts) + "\n"


def format_matrix(values: np.ndarray, decimals: int = 4) -> str:
    """One line per step, comma-separated values, missing cells as NaN."""
    fmt = f"{{:.{decimals}f}}"
    return "\n".join(",".join("NaN" if np.isnan(v) else fmt.format(v) for v in row) for row in values)


def allowed_actions(stage: Stage, disabled: tuple[str, ...] = ()) -> tuple[str, ...]:
    return tuple(a for a in STAGE_ACTIONS[stage] if a not in disabled)


def assemble_prompt(memory: Memory, window: Window, config: PromptConfig = PromptConfig(),
                    notices: tuple[str, ...] = ()) -> PromptBundle:
    stage = detect_stage(memory)
    L = window.history.shape[0]
    start, note = 0, None
    if stage is Stage.REFLECT_OUTPUT and L > config.trunc_len:
        start = L - config.trunc_len
        note = f"History truncated to the most recent {config.trunc_len} of {L} steps."
    analysis = preds = None
    if stage >= Stage.PREDICTION:
        analysis = "".join(_entry_line(e) + "\n" for e in memory.analysis_history)
    if stage is Stage.REFLECT_OUTPUT:
        preds = "".join(_entry_line(e) + "\n" for e in memory.prediction_results)
    return PromptBundle(
        stage=stage,
        history_view=window.history[start:],
        history_start=start,
        truncation_note=note,
        channel_names=window.channel_names,
        target_names=window.target_names,
        horizon=window.spec.horizon,
        first_timestamp=str(window.timestamps[start]),
        frequency_seconds=int(window.frequency / np.timedelta64(1, "s")),
        seasonal_period=window.spec.seasonal_period,
        injected_analysis=analysis,
        injected_predictions=preds,
        allowed_actions=allowed_actions(stage, config.disabled_actions),
        output_contract=_CONTRACTS[stage],
        notices=tuple(notices),
        decimals=config.decimals,
    )
