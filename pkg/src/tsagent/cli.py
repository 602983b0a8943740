"""Command-line entry point: ``tsagent <subcommand> [options]``.

Exit codes: 0 success, 1 other failure, 2 configuration or usage error,
3 data error, 4 transport error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import load_config, resolve
from .curriculum import assign_bands, schedule, score_windows, stage_boundaries, write_manifest
from .data import make_window
from .errors import ConfigError, DataError, TransportError, TsAgentError
from .evaluation import eval_windows, load_series, make_policy, run_batch, trace_filename
from .orchestrator import FAILED_TRANSPORT, run_episode
from .reward import total_reward
from .toolkit import registry_names, run_tool

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA, EXIT_TRANSPORT = 0, 1, 2, 3, 4

logger = logging.getLogger("tsagent")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run configuration file (dotted key = value)")
    p.add_argument("--data", help="CSV path; overrides data.path")
    p.add_argument("--seed", type=int, help="overrides seed")
    p.add_argument("--out", help="output directory; overrides output.dir")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any configuration key (repeatable)")
    p.add_argument("--policy", choices=("scripted", "remote"))
    p.add_argument("--disable-feature-tools", action="store_true")
    p.add_argument("--disable-model-tools", action="store_true")
    p.add_argument("--disable-refine", action="store_true")
    p.add_argument("--ablate-reward", action="append", default=[], metavar="TERM",
                   help="drop a reward term: acc, trend, seas, turn, format or length")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tsagent", description="Agentic time series forecasting harness.")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("ingest", help="validate and summarize a dataset")
    _common(p)

    p = sub.add_parser("analyze", help="run one diagnostic tool on a window and print its payload")
    _common(p)
    p.add_argument("--tool", required=True, choices=registry_names()[:-1])
    p.add_argument("--origin", type=int, default=0, help="window origin row")
    p.add_argument("--channel")
    p.add_argument("--args", default="{}", help="extra tool arguments as a JSON object")

    p = sub.add_parser("episode", help="run a single episode and write its trace")
    _common(p)
    p.add_argument("--origin", type=int, help="window origin row (default: first evaluation window)")

    p = sub.add_parser("batch", help="evaluate every window of the configured split")
    _common(p)
    p.add_argument("--workers", type=int)
    p.add_argument("--max-windows", type=int)

    p = sub.add_parser("curriculum", help="score, band and order training windows into a manifest")
    _common(p)

    p = sub.add_parser("reward", help="score a forecast file against a truth file")
    _common(p)
    p.add_argument("--forecast", required=True, help="CSV or JSON matrix, one row per horizon step")
    p.add_argument("--truth", required=True)
    p.add_argument("--period", type=int, help="seasonal period (default window.seasonal_period)")
    p.add_argument("--invalid-format", action="store_true", help="score as a format-invalid answer")
    p.add_argument("--response-tokens", type=int)

    p = sub.add_parser("serve-tools", help="serve the toolkit and forecasters over HTTP")
    _common(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    return ap


def _overrides(args) -> dict[str, str]:
    ov = {}
    for item in args.set:
        k, sep, v = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        ov[k.strip()] = v.strip()
    if args.data:
        ov["data.path"] = str(Path(args.data).resolve())
    if args.seed is not None:
        ov["seed"] = str(args.seed)
    if args.out:
        ov["output.dir"] = args.out
    if args.policy:
        ov["policy"] = args.policy
    if args.disable_feature_tools:
        ov["ablation.disable_feature_tools"] = "true"
    if args.disable_model_tools:
        ov["ablation.disable_model_tools"] = "true"
    if args.disable_refine:
        ov["ablation.disable_refine"] = "true"
    if args.ablate_reward:
        ov["reward.ablate"] = ",".join(args.ablate_reward)
    if getattr(args, "workers", None) is not None:
        ov["eval.workers"] = str(args.workers)
    if getattr(args, "max_windows", None) is not None:
        ov["eval.max_windows"] = str(args.max_windows)
    return ov


def _config(args):
    ov = _overrides(args)
    if args.config:
        return load_config(args.config, ov)
    return resolve(ov, Path.cwd())


def _print_json(doc) -> None:
    print(json.dumps(doc, indent=1, allow_nan=False))


def cmd_ingest(cfg, args) -> int:
    series = load_series(cfg)
    missing = np.isnan(series.values).sum(axis=0)
    _print_json({
        "name": series.name,
        "rows": len(series),
        "channels": list(series.channel_names),
        "n_channels": series.n_channels,
        "frequency_seconds": int(series.frequency / np.timedelta64(1, "s")),
        "start": str(series.timestamps[0]),
        "end": str(series.timestamps[-1]),
        "missing": {c: int(m) for c, m in zip(series.channel_names, missing)},
    })
    return EXIT_OK


def _window_at(cfg, origin: int):
    series = load_series(cfg)
    spec = cfg.window_spec
    if not 0 <= origin <= len(series) - spec.lookback - spec.horizon:
        raise DataError(f"origin {origin} out of range for {len(series)} rows "
                        f"with lookback {spec.lookback} and horizon {spec.horizon}")
    return make_window(series, spec, origin)


def cmd_analyze(cfg, args) -> int:
    try:
        extra = json.loads(args.args)
    except ValueError as exc:
        raise ConfigError(f"--args is not JSON: {exc}") from None
    if not isinstance(extra, dict):
        raise ConfigError("--args must be a JSON object")
    if args.channel:
        extra["channel"] = args.channel
    result = run_tool(args.tool, _window_at(cfg, args.origin), extra)
    _print_json(result.to_dict())
    return EXIT_OK


def cmd_episode(cfg, args) -> int:
    if args.origin is not None:
        window = _window_at(cfg, args.origin)
    else:
        windows = eval_windows(cfg)
        if not windows:
            raise DataError("no evaluation windows in the configured split")
        window = windows[0]
    trace = run_episode(window, make_policy(cfg), cfg.episode_config, cfg.registry())
    out = Path(cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / trace_filename(window)
    path.write_text(trace.to_json())
    (out / "config.resolved.cfg").write_text(cfg.to_text())
    total = None if trace.reward is None else trace.reward.total
    print(f"{trace.status}: {len(trace.turns)} turns, reward {total}, trace {path}")
    if trace.status == FAILED_TRANSPORT:
        print(f"transport failure: {trace.failure_reason}", file=sys.stderr)
        return EXIT_TRANSPORT
    return EXIT_OK


def cmd_batch(cfg, args) -> int:
    result = run_batch(cfg)
    print(result.report.table(), end="")
    if result.report.failed_transport:
        return EXIT_TRANSPORT
    return EXIT_OK


def cmd_curriculum(cfg, args) -> int:
    windows = eval_windows(cfg, which=cfg["curriculum.split"])
    profiles, notes = score_windows(windows, cfg.teacher, cfg["curriculum.order"], cfg["curriculum.delay"],
                                    cfg.registry())
    banded, th = assign_bands(profiles)
    stream, sched_notes = schedule(banded, cfg["curriculum.epochs_per_stage"], cfg["seed"])
    out = Path(cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(stream, out / "manifest.jsonl")
    (out / "config.resolved.cfg").write_text(cfg.to_text())
    summary = {
        "scored": len(profiles),
        "unscorable": notes,
        "thresholds": {"error_low": th.error_low, "error_high": th.error_high, "entropy": th.entropy},
        "band_sizes": {str(b): sum(p.band == b for p in banded) for b in (1, 2, 3)},
        "stage_boundaries": stage_boundaries(stream),
        "notes": sched_notes,
    }
    (out / "curriculum.json").write_text(json.dumps(summary, indent=1) + "\n")
    _print_json(summary)
    return EXIT_OK


def read_matrix(path: str) -> np.ndarray:
    """Numeric matrix from JSON (list or ``{"values": ...}``) or CSV; a non-numeric header row is skipped."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {p}: {exc}") from None
    try:
        if p.suffix.lower() == ".json":
            doc = json.loads(text)
            rows = doc["values"] if isinstance(doc, dict) else doc
        else:
            rows = [r for r in csv.reader(text.splitlines()) if r]
            try:
                [float(c) for c in rows[0]]
            except ValueError:
                rows = rows[1:]
        a = np.array(rows, dtype=np.float64)
    except (ValueError, KeyError, TypeError, IndexError) as exc:
        raise DataError(f"{p}: not a numeric matrix ({exc})") from None
    return a.reshape(-1, 1) if a.ndim == 1 else a


def cmd_reward(cfg, args) -> int:
    f, t = read_matrix(args.forecast), read_matrix(args.truth)
    if f.shape[1] != t.shape[1]:
        raise DataError(f"forecast has {f.shape[1]} channels, truth has {t.shape[1]}")
    period = args.period or cfg["window.seasonal_period"]
    b = total_reward(f, t, cfg.reward_weights, period=period, format_ok=not args.invalid_format,
                     response_tokens=args.response_tokens)
    _print_json(b.to_dict())
    return EXIT_OK


def cmd_serve(cfg, args) -> int:
    from .server import make_server

    httpd = make_server(args.host, args.port)
    print(f"serving tools on http://{args.host}:{httpd.server_address[1]}/", flush=True)
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest, "analyze": cmd_analyze, "episode": cmd_episode, "batch": cmd_batch,
    "curriculum": cmd_curriculum, "reward": cmd_reward, "serve-tools": cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse prints usage itself
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except TsAgentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
