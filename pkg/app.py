from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from src.checkpoint import CheckpointError
from src.config import ConfigError, load_config
from src.excel_writer import collect_metrics, summarize_runs, write_excel
from src.runner import diag_checkpoint, eval_checkpoint, load_notes, scripted_baseline, train

logger = logging.getLogger("iqrl")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iqrl", description="Quantized self-predictive representations for TD3 on toy control tasks.")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an agent and write metrics, config echo and a checkpoint")
    p.add_argument("--config", help="TOML or YAML config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--env")
    p.add_argument("--steps", type=int, dest="total_env_steps", help="policy decision steps after the random episodes")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--resume", help="continue from this checkpoint")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides")

    p = sub.add_parser("eval", help="exploit-mode returns of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("diag", help="latent rank and codebook statistics of a checkpoint")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("scripted", help="returns of the energy-shaping pendulum controller")
    p.add_argument("--config")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides")

    p = sub.add_parser("report", help="Excel summary of one or more run directories")
    p.add_argument("--run-dir", action="append", required=True, dest="run_dirs")
    p.add_argument("--out", required=True)
    return parser


def _train(args) -> int:
    cfg, raw = load_config(
        args.config, args.overrides,
        seed=args.seed, env=args.env, total_env_steps=args.total_env_steps, out_dir=args.out_dir,
    )
    if args.resume and not Path(args.resume).exists():
        raise CheckpointError(f"checkpoint not found: {args.resume}")
    state = train(cfg, resume=args.resume, raw_config=raw, config_name=Path(args.config).name if args.config else "config.toml")
    print(f"trained {state.env_step} decision steps, {state.update_calls} updates -> {cfg.out_dir}")
    return 0


def _eval(args) -> int:
    result = eval_checkpoint(args.checkpoint, args.episodes, args.workers)
    for i, r in enumerate(result.returns):
        print(f"episode {i}: {r:.3f}")
    print(f"mean: {result.mean:.3f}")
    return 0


def _diag(args) -> int:
    for key, value in diag_checkpoint(args.checkpoint).items():
        print(f"{key}: {value}")
    return 0


def _scripted(args) -> int:
    cfg, _ = load_config(args.config, args.overrides)
    returns, p90 = scripted_baseline(cfg, args.episodes, args.seed)
    for i, r in enumerate(returns):
        print(f"episode {i}: {r:.3f}")
    print(f"mean: {float(np.mean(returns)):.3f}")
    print(f"p90: {p90:.3f}")
    return 0


def _report(args) -> int:
    missing = [d for d in args.run_dirs if not (Path(d) / "metrics.csv").exists()]
    if missing:
        print(f"error: no metrics.csv in {', '.join(missing)}", file=sys.stderr)
        return 1
    summary = summarize_runs(args.run_dirs)
    notes = {}
    for d in args.run_dirs:
        for k, v in load_notes(d).items():
            notes[f"{Path(d).name}: {k}"] = v
    out = write_excel(summary, collect_metrics(args.run_dirs), notes, args.out)
    print(f"report written: {out}")
    return 0


COMMANDS = {"train": _train, "eval": _eval, "diag": _diag, "scripted": _scripted, "report": _report}


def cli(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        where = f" ({e.location})" if e.location else ""
        key = f" [key: {e.key}]" if e.key else ""
        print(f"config error{key}{where}: {e}", file=sys.stderr)
        return 2
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(cli())
