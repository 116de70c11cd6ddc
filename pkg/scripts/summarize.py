"""Print a per-variant summary of a results directory.

    python3 scripts/summarize.py results/binary-gain
"""

import argparse
from collections import defaultdict
from pathlib import Path

import numpy as np

from metarl_pc.harness.runner import read_csv


def summarize_evaluation(variant_dir: Path):
    rows = read_csv(variant_dir / "evaluation.csv")
    by_task = defaultdict(list)
    for seed, task, _, cum, err, da in rows:
        by_task[int(task)].append((cum, err, da))
    print(f"  greedy evaluation ({len({r[0] for r in rows})} seeds)")
    for task, vals in sorted(by_task.items()):
        cum, err, da = np.median(np.array(vals), axis=0)
        print(f"    task {task:>2}: reward {cum:9.2f}  |e| {err:.4f}  |da| {da:.4f}")


def summarize_curve(variant_dir: Path, head: int):
    rows = read_csv(variant_dir / "metrics.csv")
    med = [r[2] for r in rows]
    print(f"  episode 0 median {med[0]:.2f}; first {head} episodes mean of medians "
          f"{np.mean(med[:head]):.2f}; last moving average {rows[-1][4]:.2f}")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("results_dir", type=Path)
    p.add_argument("--head", type=int, default=20, help="episodes in the early-curve summary")
    args = p.parse_args()
    for vdir in sorted(d for d in args.results_dir.iterdir() if d.is_dir()):
        if not (vdir / "evaluation.csv").exists():
            continue
        print(vdir.name)
        summarize_evaluation(vdir)
        if (vdir / "metrics.csv").exists():
            summarize_curve(vdir, args.head)


if __name__ == "__main__":
    main()
