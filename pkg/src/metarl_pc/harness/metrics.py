"""Learning-curve statistics and the shared evaluation schedule."""

from __future__ import annotations

import numpy as np

from ..env import EnvConfig, setpoint_schedule

_EVAL_STREAM = 0xE7A1  # keeps the evaluation schedule independent of training streams


def moving_average(series, window: int = 20) -> np.ndarray:
    """Trailing mean; entry k averages ``series[max(0, k - window + 1) : k + 1]``."""
    x = np.asarray(series, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be at least 1")
    if x.size == 0:
        raise ValueError("empty series")
    c = np.concatenate([[0.0], np.cumsum(x)])
    k = np.arange(1, x.size + 1)
    lo = np.maximum(0, k - window)
    return (c[k] - c[lo]) / (k - lo)


def iqr_bands(per_seed_series) -> tuple:
    """Per-episode 25th/50th/75th percentiles across seeds (linear interpolation)."""
    lengths = {len(s) for s in per_seed_series}
    if len(per_seed_series) < 2:
        raise ValueError("need at least two seeds")
    if len(lengths) != 1:
        raise ValueError(f"series lengths differ: {sorted(lengths)}")
    q1, med, q3 = np.percentile(np.asarray(per_seed_series, dtype=np.float64), [25, 50, 75], axis=0)
    return q1, med, q3


def fixed_eval_schedule(seed: int, env_cfg: EnvConfig | None = None) -> tuple:
    """Setpoint schedule that depends on the experiment seed alone, never on the variant."""
    env_cfg = env_cfg or EnvConfig()
    rng = np.random.default_rng([int(seed), _EVAL_STREAM])
    return setpoint_schedule(rng, env_cfg.n_setpoints, (env_cfg.setpoint_low, env_cfg.setpoint_high))


def per_seed_curves(rows) -> tuple:
    """(seeds, matrix seeds x episodes) of cumulative reward averaged over tasks.

    ``rows`` are (seed, task_id, episode, cum_reward) tuples.
    """
    acc = {}
    for seed, _task, episode, value in rows:
        acc.setdefault(int(seed), {}).setdefault(int(episode), []).append(float(value))
    seeds = sorted(acc)
    n_ep = {len(acc[s]) for s in seeds}
    if len(n_ep) != 1:
        raise ValueError("seeds have different episode counts")
    curves = np.array([[np.mean(acc[s][e]) for e in sorted(acc[s])] for s in seeds])
    return seeds, curves


def metric_rows(rows, window: int = 20) -> list:
    """(episode, q1, median, q3, moving_avg_median) rows from episode records."""
    seeds, curves = per_seed_curves(rows)
    if len(seeds) >= 2:
        q1, med, q3 = iqr_bands(curves)
    else:
        q1 = med = q3 = curves[0]
    ma = moving_average(med, window)
    return [(e, q1[e], med[e], q3[e], ma[e]) for e in range(len(med))]
