"""Command line: ``run``, ``metrics`` and ``export-embeddings``."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .config import PRESETS, VARIANTS, ConfigError, load_config, resolve
from .runner import (EMBEDDING_COLUMNS, HarnessError, ensure_dir, load_checkpoint, run_experiment,
                     write_csv, write_metrics)
from ..meta_embed import export_embeddings

OUT_ENV = "METARL_PC_OUT"


def default_out(preset: str) -> Path:
    return Path(os.environ.get(OUT_ENV, "results")) / preset


def cmd_run(args) -> int:
    overrides = {}
    if args.seed_count is not None:
        overrides["seed_count"] = args.seed_count
    if args.variant is not None:
        overrides["variants"] = [args.variant]
    if args.config:
        cfg = load_config(args.config, args.preset, **overrides)
    else:
        cfg = resolve(args.preset, overrides)
    out = Path(args.out) if args.out else (Path(cfg.out_dir) if cfg.out_dir else default_out(cfg.preset))
    out = run_experiment(cfg, out)
    print(out)
    return 0


def cmd_metrics(args) -> int:
    root = Path(args.results_dir)
    dirs = [root] if (root / "episodes.csv").exists() else sorted(
        p for p in root.iterdir() if (p / "episodes.csv").exists())
    if not dirs:
        raise HarnessError(f"no episodes.csv under {root}")
    for d in dirs:
        print(write_metrics(d))
    return 0


def cmd_export(args) -> int:
    state = load_checkpoint(args.checkpoint)
    if state.enc is None:
        raise HarnessError("checkpoint has no embedding network")
    if not state.buffers:
        raise HarnessError("checkpoint was saved without replay buffers")
    cfg = state.cfg
    rng = np.random.default_rng([state.seed, 0xE3B])
    rows = export_embeddings(state.enc, state.tasks, state.buffers, cfg.embedding_draws, rng,
                             cfg.meta_hyperparams())
    out = ensure_dir(args.results_dir) / "embeddings.csv"
    write_csv(out, EMBEDDING_COLUMNS, rows)
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metarl-pc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a preset")
    run.add_argument("preset", nargs="?", choices=sorted(PRESETS),
                     help="preset name (optional when --config names one)")
    run.add_argument("--config", help="flat YAML config file")
    run.add_argument("--seed-count", type=int)
    run.add_argument("--variant", choices=VARIANTS)
    run.add_argument("--out", help=f"results directory (default ${OUT_ENV}/<preset>)")
    run.set_defaults(func=cmd_run)

    met = sub.add_parser("metrics", help="recompute metrics.csv from episodes.csv")
    met.add_argument("results_dir")
    met.set_defaults(func=cmd_metrics)

    exp = sub.add_parser("export-embeddings", help="write embeddings.csv from a checkpoint")
    exp.add_argument("checkpoint")
    exp.add_argument("results_dir")
    exp.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, HarnessError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
