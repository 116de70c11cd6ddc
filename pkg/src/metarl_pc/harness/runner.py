"""Runs presets seed by seed and writes CSV results and checkpoints.

Layout of a results directory::

    config.yaml                      resolved configuration
    <variant>/seed_<k>/...           per-seed CSVs and checkpoint.npz
    <variant>/episodes.csv           merged over seeds
    <variant>/metrics.csv            quartiles across seeds per episode

Every seed is an independent job writing only to its own directory, so
seeds may run in parallel; merging happens afterwards from the files.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..ddpg import Agent, ReplayBuffer
from ..env import Experiment, StateVariant, Task, make_task_set
from ..meta_embed import (Encoder, TrainLog, adapt, context_dim, evaluate, export_embeddings,
                          meta_train)
from ..tensor_nn import network_arrays, network_from_arrays
from .config import ConfigError, ExperimentConfig, dump_config
from .metrics import fixed_eval_schedule, metric_rows

EPISODE_COLUMNS = ("seed", "task_id", "episode", "cum_reward")
TRAJECTORY_COLUMNS = ("seed", "task_id", "episode", "t_seconds", "setpoint", "output", "action",
                      "reward")
EVALUATION_COLUMNS = ("seed", "task_id", "episode", "cum_reward", "mean_abs_error",
                      "mean_abs_action_change")
EMBEDDING_COLUMNS = ("task_id", "z1", "z2", "z3")
METRIC_COLUMNS = ("episode", "q1", "median", "q3", "moving_avg_median")

# files merged across seeds (embeddings stay per seed to keep their schema)
MERGED = {"episodes.csv": EPISODE_COLUMNS, "meta_episodes.csv": EPISODE_COLUMNS,
          "trajectory.csv": TRAJECTORY_COLUMNS, "evaluation.csv": EVALUATION_COLUMNS}


class HarnessError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# building blocks

def build_tasks(cfg: ExperimentConfig) -> tuple:
    """(training tasks, held-out tasks) for the configured experiment."""
    penalties = dict(alpha=cfg.penalty_alpha, beta_action=cfg.penalty_beta_action,
                     delta=cfg.penalty_delta)
    tasks = make_task_set(cfg.experiment, tuple(cfg.gains), tuple(cfg.time_constants),
                          (cfg.held_out_gain, cfg.held_out_time_constant), penalties)
    if cfg.overshoot_sign_as_printed:
        tasks = [dataclasses.replace(t, reward=dataclasses.replace(
            t.reward, overshoot_sign_as_printed=True)) for t in tasks]
    return [t for t in tasks if t.role == "train"], [t for t in tasks if t.role == "test"]


def uses_embedding(variant: str) -> bool:
    return variant in ("DE", "PE")


def state_variant_for(cfg: ExperimentConfig, variant: str) -> StateVariant:
    exp = Experiment(cfg.experiment)
    # the binary-gain baseline sees no action history, so it cannot tell the signs apart
    if uses_embedding(variant) or exp is Experiment.BinaryGain:
        return StateVariant.MetaBase
    if exp is Experiment.ControlObjectives:
        return StateVariant.NoEmbedObjectives
    return StateVariant.NoEmbedDynamics


def seed_streams(seed: int) -> dict:
    """Independent generators per purpose; identical across variants for a given seed."""
    names = ("init_agent", "init_encoder", "train", "adapt", "evaluate", "export")
    children = np.random.SeedSequence(int(seed)).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def new_models(cfg: ExperimentConfig, variant: str, streams: dict) -> tuple:
    sv = state_variant_for(cfg, variant)
    latent = cfg.latent_dim if uses_embedding(variant) else 0
    agent = Agent(sv.dim, latent, cfg.ddpg_config(), streams["init_agent"])
    enc = None
    if uses_embedding(variant):
        mode = "deterministic" if variant == "DE" else "probabilistic"
        enc = Encoder(context_dim(sv.dim), mode, tuple(cfg.encoder_hidden), cfg.feature_dim,
                      cfg.latent_dim, streams["init_encoder"])
    return agent, enc


@dataclass
class SeedState:
    """Everything one seed produces, in memory."""

    cfg: ExperimentConfig
    variant: str
    seed: int
    streams: dict
    agent: Agent
    enc: Encoder | None
    tasks: list
    buffers: list
    meta_log: TrainLog | None = None
    adapt_log: TrainLog | None = None

    @property
    def state_variant(self) -> StateVariant:
        return state_variant_for(self.cfg, self.variant)

    def buffer_for(self, task_id: int):
        for t, b in zip(self.tasks, self.buffers):
            if t.id == task_id:
                return b
        return None


def meta_train_seed(cfg: ExperimentConfig, variant: str, seed: int, callback=None) -> SeedState:
    """Fresh models meta-trained on the training tasks (skipped for Scratch)."""
    streams = seed_streams(seed)
    agent, enc = new_models(cfg, variant, streams)
    train, _ = build_tasks(cfg)
    state = SeedState(cfg, variant, seed, streams, agent, enc, [], [])
    if variant == "Scratch":
        return state
    agent, enc, log = meta_train(train, agent, enc, cfg.meta_hyperparams(), streams["train"],
                                 state.state_variant, cfg.env_config(), callback=callback)
    state.tasks, state.buffers, state.meta_log = list(train), list(log.buffers), log
    return state


def adapt_seed(state: SeedState, task: Task | None = None) -> TrainLog:
    """Adaptation on the held-out task under the seed's fixed schedule; encoder stays frozen."""
    cfg = state.cfg
    if task is None:
        _, test = build_tasks(cfg)
        if not test:
            raise ConfigError(f"experiment {cfg.experiment} has no held-out task")
        task = test[0]
    schedule = fixed_eval_schedule(state.seed, cfg.env_config())
    log = adapt(task, state.agent, state.enc, cfg.meta_hyperparams(), state.streams["adapt"],
                state.state_variant, cfg.env_config(), schedule, cfg.adapt_episodes,
                cfg.adapt_train_steps)
    state.adapt_log = log
    state.tasks.append(task)
    state.buffers.append(log.buffers[0])
    return log


def export_seed(state: SeedState) -> list:
    """Embedding draws for every training task and for the held-out task.

    The held-out task's context comes from an adaptation run with the
    encoder frozen, unless the state already holds a buffer for it.
    """
    cfg = state.cfg
    if state.enc is None:
        raise ConfigError("embedding export needs an embedding variant")
    _, test = build_tasks(cfg)
    for task in test:
        if state.buffer_for(task.id) is None:
            adapt_seed(state, task)
    return export_embeddings(state.enc, state.tasks, state.buffers, cfg.embedding_draws,
                             state.streams["export"], cfg.meta_hyperparams())


def evaluate_seed(state: SeedState, tasks: list, episode: int) -> tuple:
    """Greedy rollouts on ``tasks`` under the fixed schedule.

    Returns (evaluation rows, trajectory rows).
    """
    cfg = state.cfg
    buffers = [state.buffer_for(t.id) for t in tasks]
    cum, err, traj = evaluate(state.agent, state.enc, tasks, buffers, cfg.meta_hyperparams(),
                              fixed_eval_schedule(state.seed, cfg.env_config()),
                              state.streams["evaluate"], state.state_variant, cfg.env_config())
    eval_rows, traj_rows = [], []
    for task, c, e, tj in zip(tasks, cum, err, traj):
        da = np.abs(np.diff(tj["action"], prepend=0.0))
        eval_rows.append((state.seed, task.id, episode, float(c), float(e), float(da.mean())))
        for k in range(len(tj["action"])):
            traj_rows.append((state.seed, task.id, episode, cfg.dt * (k + 1), tj["setpoint"][k],
                              tj["output"][k], tj["action"][k], tj["reward"][k]))
    return eval_rows, traj_rows


def episode_rows(seed: int, log: TrainLog) -> list:
    return [(seed, tid, ep, float(v)) for ep, row in enumerate(log.rewards)
            for tid, v in zip(log.task_ids, row)]


# --------------------------------------------------------------------------
# checkpoints

def save_checkpoint(state: SeedState, path):
    arrays = {}
    for name, net in state.agent.networks().items():
        arrays.update(network_arrays(name, net))
    if state.enc is not None:
        for name, net in state.enc.networks().items():
            arrays.update(network_arrays(name, net))
    if state.cfg.checkpoint_buffers:
        for i, buf in enumerate(state.buffers):
            arrays.update(buf.to_arrays(f"buffer{i}"))
    meta = {"seed": state.seed, "variant": state.variant, "config": state.cfg.to_dict(),
            "mode": None if state.enc is None else state.enc.mode,
            "latent_dim": state.agent.latent_dim,
            "tasks": [t.to_dict() for t in state.tasks],
            "n_buffers": len(state.buffers) if state.cfg.checkpoint_buffers else 0}
    arrays["meta"] = np.array(json.dumps(meta))
    np.savez(path, **arrays)


def load_checkpoint(path) -> SeedState:
    with np.load(path) as f:
        meta = json.loads(str(f["meta"]))
        names = ("actor", "critic", "actor_target", "critic_target")
        nets = {n: network_from_arrays(n, f) for n in names}
        cfg = ExperimentConfig(**meta["config"])
        agent = Agent.from_networks(nets, meta["latent_dim"], cfg.ddpg_config())
        enc = None
        if meta["mode"] is not None:
            enc = Encoder.from_networks(network_from_arrays("enc_feature", f),
                                        network_from_arrays("enc_head", f), meta["mode"],
                                        meta["latent_dim"])
        buffers = [ReplayBuffer.from_arrays(f"buffer{i}", f) for i in range(meta["n_buffers"])]
    tasks = [Task.from_dict(d) for d in meta["tasks"]]
    return SeedState(cfg, meta["variant"], meta["seed"], seed_streams(meta["seed"]), agent, enc,
                     tasks, buffers)


# --------------------------------------------------------------------------
# files

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        return [tuple(float(x) for x in row) for row in r]


def ensure_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise HarnessError(f"output directory {path} is not writable: {exc}") from exc
    return path


def run_seed(cfg: ExperimentConfig, variant: str, seed: int, seed_dir) -> Path:
    """One independent job: train/adapt/export as the stage requires, write the seed's files."""
    seed_dir = ensure_dir(seed_dir)
    if cfg.stage != "adapt" and variant == "Scratch":
        raise ConfigError("the Scratch variant only applies to adaptation presets")
    state = meta_train_seed(cfg, variant, seed)
    if state.meta_log is not None:
        name = "meta_episodes.csv" if cfg.stage == "adapt" else "episodes.csv"
        write_csv(seed_dir / name, EPISODE_COLUMNS, episode_rows(seed, state.meta_log))

    if cfg.stage == "generalize":
        ev, tr = evaluate_seed(state, list(state.tasks), cfg.episodes)
    elif cfg.stage == "adapt":
        log = adapt_seed(state)
        write_csv(seed_dir / "episodes.csv", EPISODE_COLUMNS, episode_rows(seed, log))
        ev, tr = evaluate_seed(state, [state.tasks[-1]], cfg.adapt_episodes)
    else:
        rows = export_seed(state)
        write_csv(seed_dir / "embeddings.csv", EMBEDDING_COLUMNS, rows)
        ev, tr = evaluate_seed(state, list(state.tasks), cfg.episodes)
    write_csv(seed_dir / "evaluation.csv", EVALUATION_COLUMNS, ev)
    write_csv(seed_dir / "trajectory.csv", TRAJECTORY_COLUMNS, tr)
    save_checkpoint(state, seed_dir / "checkpoint.npz")
    return seed_dir


def _run_job(args):
    return run_seed(*args)


def merge_seeds(variant_dir: Path):
    seed_dirs = sorted(variant_dir.glob("seed_*"), key=lambda p: int(p.name.split("_")[1]))
    for name, columns in MERGED.items():
        parts = [d / name for d in seed_dirs if (d / name).exists()]
        if not parts:
            continue
        with open(variant_dir / name, "w", newline="") as out:
            out.write(",".join(columns) + "\n")
            for p in parts:
                with open(p) as fh:
                    next(fh)
                    out.writelines(fh)


def write_metrics(variant_dir) -> Path:
    variant_dir = Path(variant_dir)
    src = variant_dir / "episodes.csv"
    if not src.exists():
        raise HarnessError(f"{src} not found")
    rows = read_csv(src)
    out = variant_dir / "metrics.csv"
    write_csv(out, METRIC_COLUMNS, metric_rows(rows))
    return out


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> Path:
    """Run every (variant, seed) job of ``cfg`` and return the results directory."""
    out = ensure_dir(out_dir or cfg.out_dir or Path("results") / cfg.preset)
    if cfg.stage in ("adapt",) and not build_tasks(cfg)[1]:
        raise ConfigError(f"experiment {cfg.experiment} has no held-out task to adapt to")
    dump_config(cfg.replace(out_dir=str(out)), out / "config.yaml")
    jobs = [(cfg, v, s, out / v / f"seed_{s}") for v in cfg.variants for s in cfg.seeds]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            list(pool.map(_run_job, jobs))
    else:
        for job in jobs:
            _run_job(job)
    for v in cfg.variants:
        merge_seeds(out / v)
        write_metrics(out / v)
    return out
