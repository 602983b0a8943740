"""Policies: a deterministic rule-based agent and a chat-completions client."""
from __future__ import annotations

import json
import os
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np

from .errors import TransportError
from .memory import PromptBundle, Stage
from .models import ForecastModelId, default_ar_order
from .orchestrator import PolicyReply
from .toolkit import EVENT_LABELS

SCRIPTED_TOOLS = ("extract_data_quality", "extract_basic_statistics", "summarize_events")


@dataclass(frozen=True)
class ScriptedConfig:
    trend_threshold: float = 1.0  # |slope| * L / std above which a trend counts as strong
    entropy_threshold: float = 0.95
    seasonal_tolerance: float = 0.1  # relative gap between spectral and seasonal period
    refine: bool = False
    refine_margin: float = 0.1  # fraction of the history range added on each side


def _analysis_by_tool(analysis: list[dict]) -> dict[str, list[dict]]:
    out: dict[str, list[dict]] = {}
    for entry in analysis:
        out.setdefault(entry.get("tool_name"), []).append(entry.get("payload", {}))
    return out


def _channel_records(payloads: list[dict], targets) -> list[dict]:
    recs = []
    for p in payloads:
        for name, rec in (p.get("channels") or {}).items():
            if rec is not None and (not targets or name in targets):
                recs.append(rec)
    return recs


def choose_model(analysis: list[dict], seasonal_period: int, targets=(),
                 config: ScriptedConfig = ScriptedConfig()) -> tuple[ForecastModelId, str]:
    """Rule table mapping diagnostic summaries to a built-in forecaster.

    Checked in order: abnormal channel -> moving average; high permutation
    entropy -> AR; dominant Stable -> seasonal naive; dominant Rise/Decline with a
    strong trend -> drift; spectral peak at the seasonal period -> seasonal naive;
    dominant Oscillation -> AR; anything else -> seasonal naive. Without any
    usable diagnostics the AR model is used.
    """
    by_tool = _analysis_by_tool(analysis)
    P = seasonal_period
    quality = _channel_records(by_tool.get("extract_data_quality", []), targets)
    dynamics = _channel_records(by_tool.get("extract_within_channel_dynamics", []), targets)
    events = _channel_records(by_tool.get("summarize_events", []), targets)
    stats = _channel_records(by_tool.get("extract_basic_statistics", []), targets)

    if not (quality or dynamics or events or stats):
        return ForecastModelId.autoregressive(default_ar_order(P)), "no diagnostics available"
    if any(q.get("abnormal") for q in quality):
        return ForecastModelId.moving_average(P), "abnormal channel"
    pes = [d["permutation_entropy"] for d in dynamics if d.get("permutation_entropy") is not None]
    if pes and max(pes) > config.entropy_threshold:
        return ForecastModelId.autoregressive(default_ar_order(P)), "high permutation entropy"
    dominant = None
    if events:
        votes = {lab: 0 for lab in EVENT_LABELS}
        for e in events:
            votes[e["dominant_label"]] += 1
        dominant = max(EVENT_LABELS, key=lambda lab: (votes[lab], -EVENT_LABELS.index(lab)))
    if dominant == "Stable":
        return ForecastModelId.seasonal_naive(P), "dominant Stable"
    if dominant in ("Rise", "Decline"):
        strength = max((e["trend_strength"] or 0.0) for e in events)
        if strength > config.trend_threshold:
            return ForecastModelId.drift(), f"dominant {dominant} with strong trend"
    spectra = [s["spectral"] for s in stats if s.get("spectral")]
    if spectra and all(abs(sp[0]["period"] - P) <= config.seasonal_tolerance * P for sp in spectra):
        return ForecastModelId.seasonal_naive(P), "spectral peak at the seasonal period"
    if dominant == "Oscillation":
        return ForecastModelId.autoregressive(default_ar_order(P)), "dominant Oscillation"
    return ForecastModelId.seasonal_naive(P), "default"


def format_answer(values: np.ndarray, timestamps=None) -> str:
    """Answer body lines; floats use repr so they parse back bit-exactly."""
    lines = []
    for i, row in enumerate(np.asarray(values, dtype=np.float64)):
        cells = [repr(float(v)) for v in row]
        if timestamps is not None:
            cells.insert(0, str(timestamps[i]))
        lines.append(",".join(cells))
    return "\n".join(lines)


class ScriptedPolicy:
    """Deterministic rule-based agent; stateless, so one instance can serve many episodes."""

    def __init__(self, config: ScriptedConfig = ScriptedConfig()):
        self.config = config

    def respond(self, bundle: PromptBundle) -> PolicyReply:
        if bundle.stage is Stage.FEATURE_EXTRACTION:
            calls = [{"name": n, "arguments": {}} for n in SCRIPTED_TOOLS]
            return PolicyReply(json.dumps(calls))
        if bundle.stage is Stage.PREDICTION:
            model, _ = choose_model(bundle.analysis(), bundle.seasonal_period, bundle.target_names, self.config)
            return PolicyReply(json.dumps({"name": "predict_time_series", "arguments": model.to_dict()}))
        return PolicyReply(self._final(bundle))

    def _final(self, bundle: PromptBundle) -> str:
        pred = bundle.predictions()[-1]
        values = np.array(pred["values"], dtype=np.float64)
        note = f"Using {pred['model']['model']} forecast"
        if self.config.refine:
            idx = [bundle.channel_names.index(c) for c in bundle.target_names]
            hist = bundle.history_view[:, idx]
            lo, hi = np.nanmin(hist, axis=0), np.nanmax(hist, axis=0)
            m = self.config.refine_margin * (hi - lo)
            clipped = np.clip(values, lo - m, hi + m)
            if not np.array_equal(clipped, values):
                note += "; clipped to the historical range plus margin"
            values = clipped
        freq = np.timedelta64(bundle.frequency_seconds, "s")
        last = np.datetime64(bundle.first_timestamp) + freq * (bundle.history_view.shape[0] - 1)
        stamps = last + freq * np.arange(1, values.shape[0] + 1)
        return f"<think>{note}.</think>\n<answer>\n{format_answer(values, stamps)}\n</answer>"


def scripted_policy(config: ScriptedConfig = ScriptedConfig()) -> ScriptedPolicy:
    return ScriptedPolicy(config)


SYSTEM_MESSAGE = (
    "You are a time series forecasting agent. Work in three turns: diagnose the series with "
    "feature-extraction tools, call predict_time_series with the most suitable model, then reflect "
    "and output the forecast. Follow the output format stated in each prompt exactly."
)


@dataclass(frozen=True)
class ChatEndpoint:
    url: str
    model: str = "default"
    api_key: str | None = None
    timeout: float = 120.0
    temperature: float = 0.0
    max_tokens: int = 4096

    @classmethod
    def from_env(cls, url: str | None = None, model: str | None = None, api_key: str | None = None, **kw):
        """Fill unset fields from ``TSAGENT_LLM_ENDPOINT``, ``TSAGENT_LLM_MODEL`` and ``TSAGENT_LLM_API_KEY``."""
        return cls(
            url=os.environ.get("TSAGENT_LLM_ENDPOINT", url or ""),
            model=os.environ.get("TSAGENT_LLM_MODEL", model or "default"),
            api_key=os.environ.get("TSAGENT_LLM_API_KEY", api_key),
            **kw,
        )


class RemotePolicy:
    """Chat-completions client: the rendered prompt is the user message."""

    def __init__(self, endpoint: ChatEndpoint, system_message: str = SYSTEM_MESSAGE):
        self.endpoint = endpoint
        self.system_message = system_message

    def request_body(self, bundle: PromptBundle) -> dict:
        ep = self.endpoint
        return {
            "model": ep.model,
            "messages": [
                {"role": "system", "content": self.system_message},
                {"role": "user", "content": bundle.render()},
            ],
            "temperature": ep.temperature,
            "max_tokens": ep.max_tokens,
        }

    def respond(self, bundle: PromptBundle) -> PolicyReply:
        ep = self.endpoint
        headers = {"Content-Type": "application/json"}
        if ep.api_key:
            headers["Authorization"] = f"Bearer {ep.api_key}"
        req = urllib.request.Request(ep.url, data=json.dumps(self.request_body(bundle)).encode(),
                                     headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=ep.timeout) as resp:
                raw = resp.read()
        except urllib.error.HTTPError as exc:
            raise TransportError(f"chat endpoint returned HTTP {exc.code}") from exc
        except (OSError, ValueError) as exc:
            raise TransportError(f"chat endpoint unreachable: {exc}") from exc
        try:
            doc = json.loads(raw)
            text = doc["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError("malformed chat response") from exc
        if not isinstance(text, str):
            raise TransportError("chat response content is not text")
        tokens = (doc.get("usage") or {}).get("completion_tokens")
        return PolicyReply(text, int(tokens) if tokens is not None else None)


def remote_policy(endpoint: ChatEndpoint) -> RemotePolicy:
    return RemotePolicy(endpoint)
