"""Run configuration: flat ``dotted.key = value`` text files.

Lines starting with ``#`` are comments. ``preset = long_term`` (96/96) or
``preset = short_term`` (168/24) fills in the window lengths; explicit
``window.*`` keys win over the preset. ``TSAGENT_LLM_ENDPOINT``,
``TSAGENT_LLM_API_KEY`` and ``TSAGENT_LLM_MODEL`` override the ``llm.*`` keys.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from .data import CsvSchema, WindowSpec
from .errors import ConfigError, ModelError
from .memory import PromptConfig
from .models import EndpointConfig, ExternalRegistry, ForecastModelId
from .orchestrator import EpisodeConfig
from .policies import ChatEndpoint, ScriptedConfig
from .reward import RewardWeights

PRESETS = {
    "long_term": {"window.lookback": "96", "window.horizon": "96"},
    "short_term": {"window.lookback": "168", "window.horizon": "24"},
}

_BOOL = {"true": True, "1": True, "yes": True, "on": True,
         "false": False, "0": False, "no": False, "off": False}


def _bool(v: str) -> bool:
    try:
        return _BOOL[v.strip().lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {v!r}") from None


def _list(v: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in v.split(",") if x.strip())


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in _list(v))


def _opt_int(v: str):
    return None if v.strip().lower() in ("", "none") else int(v)


# key -> (parser, default as text)
SCHEMA: dict[str, tuple] = {
    "preset": (str, ""),
    "seed": (int, "0"),
    "output.dir": (str, "runs/out"),  # relative to the working directory; data.path is relative to the file
    "data.path": (str, ""),
    "data.name": (str, ""),
    "data.timestamp_column": (str, "date"),
    "data.value_columns": (_list, ""),
    "data.frequency": (str, ""),
    "data.split": (_floats, "0.7,0.1,0.2"),
    "data.eval_split": (str, "test"),
    "window.lookback": (int, "96"),
    "window.horizon": (int, "96"),
    "window.stride": (int, "1"),
    "window.seasonal_period": (int, "24"),
    "window.target_channels": (_list, ""),
    "eval.max_windows": (_opt_int, "none"),
    "eval.workers": (int, "1"),
    "policy": (str, "scripted"),
    "llm.endpoint": (str, ""),
    "llm.api_key": (str, ""),
    "llm.model": (str, "default"),
    "llm.timeout": (float, "120"),
    "llm.temperature": (float, "0"),
    "llm.max_tokens": (int, "4096"),
    "scripted.refine": (_bool, "false"),
    "scripted.refine_margin": (float, "0.1"),
    "scripted.trend_threshold": (float, "1.0"),
    "scripted.entropy_threshold": (float, "0.95"),
    "episode.k_max": (int, "3"),
    "episode.max_retries": (int, "2"),
    "prompt.trunc_len": (int, "48"),
    "prompt.decimals": (int, "4"),
    "reward.w_acc": (float, "0.6"),
    "reward.w_trend": (float, "0.1"),
    "reward.w_seas": (float, "0.1"),
    "reward.w_turn": (float, "0.2"),
    "reward.p_format": (float, "1.0"),
    "reward.p_length_answer": (float, "1.0"),
    "reward.p_length_response": (float, "1.0"),
    "reward.token_budget": (int, "4096"),
    "reward.tolerance": (int, "2"),
    "reward.ablate": (_list, ""),
    "ablation.disable_feature_tools": (_bool, "false"),
    "ablation.disable_model_tools": (_bool, "false"),
    "ablation.disable_refine": (_bool, "false"),
    "curriculum.teacher": (str, "seasonal_naive"),
    "curriculum.order": (int, "3"),
    "curriculum.delay": (int, "1"),
    "curriculum.epochs_per_stage": (int, "1"),
    "curriculum.split": (str, "train"),
    "external.endpoints": (_list, ""),  # name=url pairs, comma separated
    "external.timeout": (float, "30"),
}

_ENV = {"llm.endpoint": "TSAGENT_LLM_ENDPOINT", "llm.api_key": "TSAGENT_LLM_API_KEY",
        "llm.model": "TSAGENT_LLM_MODEL"}


def parse_text(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


@dataclass(frozen=True)
class RunConfig:
    raw: dict  # resolved key -> text value, every schema key present
    base_dir: Path = Path(".")

    def __getitem__(self, key: str):
        parser = SCHEMA[key][0]
        try:
            return parser(self.raw[key])
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc

    @property
    def data_path(self) -> Path:
        p = Path(self["data.path"])
        return p if p.is_absolute() else self.base_dir / p

    @property
    def csv_schema(self) -> CsvSchema:
        cols = self["data.value_columns"] or None
        return CsvSchema(self["data.timestamp_column"], cols, self["data.frequency"] or None)

    @property
    def window_spec(self) -> WindowSpec:
        try:
            return WindowSpec(self["window.lookback"], self["window.horizon"], self["window.stride"],
                              self["window.seasonal_period"], self["window.target_channels"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def reward_weights(self) -> RewardWeights:
        w = RewardWeights(
            self["reward.w_acc"], self["reward.w_trend"], self["reward.w_seas"], self["reward.w_turn"],
            self["reward.p_format"], self["reward.p_length_answer"], self["reward.p_length_response"],
            self["reward.token_budget"], self["reward.tolerance"],
        )
        for term in self["reward.ablate"]:
            w = w.ablate(term)
        return w

    @property
    def episode_config(self) -> EpisodeConfig:
        return EpisodeConfig(
            k_max=self["episode.k_max"],
            max_retries=self["episode.max_retries"],
            prompt=PromptConfig(self["prompt.trunc_len"], self["prompt.decimals"]),
            weights=self.reward_weights,
            disable_feature_tools=self["ablation.disable_feature_tools"],
            disable_model_tools=self["ablation.disable_model_tools"],
            seed=self["seed"],
        )

    @property
    def scripted_config(self) -> ScriptedConfig:
        return ScriptedConfig(
            trend_threshold=self["scripted.trend_threshold"],
            entropy_threshold=self["scripted.entropy_threshold"],
            refine=self["scripted.refine"] and not self["ablation.disable_refine"],
            refine_margin=self["scripted.refine_margin"],
        )

    @property
    def chat_endpoint(self) -> ChatEndpoint:
        if not self["llm.endpoint"]:
            raise ConfigError("policy 'remote' needs llm.endpoint (or TSAGENT_LLM_ENDPOINT)")
        return ChatEndpoint(self["llm.endpoint"], self["llm.model"], self["llm.api_key"] or None,
                            self["llm.timeout"], self["llm.temperature"], self["llm.max_tokens"])

    @property
    def teacher(self) -> ForecastModelId:
        name = self["curriculum.teacher"]
        P = self["window.seasonal_period"]
        params = {"seasonal_naive": {"period": P}, "moving_average": {"window": P},
                  "autoregressive": {"order": max(1, min(8, P // 4))}}.get(name, {})
        try:
            if name.startswith("external:"):
                return ForecastModelId.external(name.split(":", 1)[1])
            return ForecastModelId.from_dict({"model": name, **params})
        except (ModelError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def registry(self) -> ExternalRegistry:
        reg = ExternalRegistry()
        for item in self["external.endpoints"]:
            name, sep, url = item.partition("=")
            if not sep or not name.strip() or not url.strip():
                raise ConfigError(f"external.endpoints entry {item!r} is not name=url")
            reg.register(name.strip(), EndpointConfig(url.strip(), self["external.timeout"]))
        return reg

    def to_text(self) -> str:
        lines = ["# resolved run configuration"]
        for k in sorted(self.raw):
            v = self.raw[k]
            if k == "llm.api_key" and v:
                v = "***"
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        return resolve({**self.raw, **overrides}, self.base_dir, apply_env=False)


def resolve(values: dict[str, str], base_dir: Path = Path("."), apply_env: bool = True) -> RunConfig:
    unknown = sorted(set(values) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    raw = {k: d for k, (_, d) in SCHEMA.items()}
    preset = values.get("preset", "")
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
        raw.update(PRESETS[preset])
    raw.update(values)
    if apply_env:
        for key, env in _ENV.items():
            if os.environ.get(env):
                raw[key] = os.environ[env]
    cfg = RunConfig(raw, Path(base_dir))
    for k in SCHEMA:
        cfg[k]  # type-check every value up front
    if cfg["policy"] not in ("scripted", "remote"):
        raise ConfigError(f"policy must be 'scripted' or 'remote', got {cfg['policy']!r}")
    if cfg["data.eval_split"] not in ("train", "val", "test", "all"):
        raise ConfigError("data.eval_split must be train, val, test or all")
    cfg.window_spec
    cfg.reward_weights
    cfg.registry()
    return cfg


def load_config(path: str | Path, overrides: dict[str, str] | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return resolve({**parse_text(text), **(overrides or {})}, path.parent)
