"""Agentic time series forecasting: diagnostic tools, forecasters, a staged
episode loop, multi-view rewards and curriculum ordering."""
from .config import RunConfig, load_config, resolve
from .curriculum import DifficultyProfile, assign_bands, schedule, score_windows, write_manifest
from .data import (CsvSchema, MultivariateSeries, Window, WindowSpec, denormalize, load_csv, make_window,
                   make_windows, split, zscore)
from .errors import (ConfigError, DataError, ModelError, ToolError, TransportError, TsAgentError)
from .evaluation import EvalReport, mae, mse, run_batch
from .memory import Memory, Stage, assemble_prompt, detect_stage
from .models import ForecastModelId, fit_ar, predict_time_series, register_external
from .orchestrator import EpisodeConfig, EpisodeTrace, parse_action, run_episode, validate_action
from .policies import ChatEndpoint, RemotePolicy, ScriptedPolicy, remote_policy, scripted_policy
from .reward import RewardBreakdown, RewardWeights, total_reward
from .signal import permutation_entropy
from .toolkit import ToolResult, run_tool, tool_registry

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "load_config", "resolve", "DifficultyProfile", "assign_bands", "schedule", "score_windows",
    "write_manifest", "CsvSchema", "MultivariateSeries", "Window", "WindowSpec", "denormalize", "load_csv",
    "make_window", "make_windows", "split", "zscore", "ConfigError", "DataError", "ModelError", "ToolError",
    "TransportError", "TsAgentError", "EvalReport", "mae", "mse", "run_batch", "Memory", "Stage",
    "assemble_prompt", "detect_stage", "ForecastModelId", "fit_ar", "predict_time_series", "register_external",
    "EpisodeConfig", "EpisodeTrace", "parse_action", "run_episode", "validate_action", "ChatEndpoint",
    "RemotePolicy", "ScriptedPolicy", "remote_policy", "scripted_policy", "RewardBreakdown", "RewardWeights",
    "total_reward", "permutation_entropy", "ToolResult", "run_tool", "tool_registry",
]
