"""Context embeddings and the meta-training / adaptation loops.

Training tasks are processed in lockstep: rollouts query the actor once per
time step for all tasks, and each update stacks every task's transition batch
(each with its own broadcast z) into a single forward/backward pass. The loss
of a stacked batch is the sum of the per-task mean losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ddpg import Agent, Batch, ReplayBuffer, actor_loss, critic_loss, select_action, \
    soft_update_targets
from .env import EnvConfig, StateVariant, Task, TaskEnv
from .tensor_nn import Network, OptimizerConfig, backward, forward, optimizer_step

LATENT_DIM = 3


class EmptyContextError(ValueError):
    pass


@dataclass
class MetaHyperparams:
    alpha1: float = 1e-3
    alpha2: float = 1e-3
    alpha3: float = 1e-3
    beta_latent: float = 1e-3
    context_size: int = 64
    recency_window: int = 200
    batch_size: int = 128
    episodes: int = 100
    train_steps: int = 100
    buffer_capacity: int = 100_000
    pe_regularizer: str = "l1"

    def __post_init__(self):
        for name in ("context_size", "recency_window", "batch_size", "buffer_capacity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if min(self.alpha1, self.alpha2, self.alpha3) <= 0 or self.beta_latent < 0:
            raise ValueError("learning rates must be positive and beta_latent non-negative")
        if self.pe_regularizer not in ("l1", "kl"):
            raise ValueError("pe_regularizer must be 'l1' or 'kl'")


@dataclass
class LatentContext:
    mode: str
    z: np.ndarray
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    eps: np.ndarray | None = None


class Encoder:
    """Shared per-tuple encoder, mean pooling, then a linear head.

    The head emits z directly (deterministic) or a mean and log-std
    (probabilistic).
    """

    def __init__(self, tuple_dim: int, mode: str = "deterministic", hidden=(64, 64),
                 feature_dim: int = 32, latent_dim: int = LATENT_DIM,
                 rng: np.random.Generator | None = None, head_activation: str = "identity"):
        if mode not in ("deterministic", "probabilistic"):
            raise ValueError(f"unknown embedding mode {mode!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.mode = mode
        self.tuple_dim = tuple_dim
        self.latent_dim = latent_dim
        self.feature = Network([tuple_dim, *hidden, feature_dim],
                               ["relu"] * len(hidden) + ["identity"], rng)
        n_out = latent_dim if mode == "deterministic" else 2 * latent_dim
        self.head = Network([feature_dim, n_out], [head_activation], rng)

    @classmethod
    def from_networks(cls, feature: Network, head: Network, mode: str,
                      latent_dim: int = LATENT_DIM) -> "Encoder":
        enc = object.__new__(cls)
        enc.mode, enc.latent_dim, enc.tuple_dim = mode, latent_dim, feature.in_dim
        enc.feature, enc.head = feature, head
        return enc

    @property
    def probabilistic(self) -> bool:
        return self.mode == "probabilistic"

    def networks(self) -> dict:
        return {"enc_feature": self.feature, "enc_head": self.head}

    def checksum(self) -> str:
        return self.feature.checksum() + self.head.checksum()

    def copy(self) -> "Encoder":
        other = object.__new__(Encoder)
        other.__dict__.update(self.__dict__)
        other.feature = self.feature.copy()
        other.head = self.head.copy()
        return other


def context_dim(state_dim: int) -> int:
    return 2 * state_dim + 2


def flatten_batch(b: Batch) -> np.ndarray:
    """(s, a, r, s') rows."""
    return np.hstack([b.s, b.a[:, None], b.r[:, None], b.s_next])


def sample_context_recent(buffer: ReplayBuffer, M: int, rng: np.random.Generator,
                          window: int | None = None) -> np.ndarray:
    """M tuples from the ``window`` most recent insertions.

    Without replacement when the window holds at least M tuples.
    """
    if len(buffer) == 0:
        raise EmptyContextError(f"buffer for task {buffer.task_id} is empty")
    idx = buffer.recent_indices(window or buffer.capacity)
    if len(idx) >= M:
        pick = idx[rng.choice(len(idx), size=M, replace=False)]
    else:
        pick = idx[rng.integers(0, len(idx), size=M)]
    return flatten_batch(buffer.take(pick))


def cold_start_context(state_dim: int) -> np.ndarray:
    return np.zeros((1, context_dim(state_dim)))


def context_or_cold_start(buffer: ReplayBuffer, M: int, rng, window) -> np.ndarray:
    if len(buffer) == 0:
        return cold_start_context(buffer.state_dim)
    return sample_context_recent(buffer, M, rng, window)


@dataclass
class _EncodeCache:
    groups: list
    std: np.ndarray | None
    eps: np.ndarray | None
    head_tape: object


def _pool(enc: Encoder, contexts):
    """Mean-pooled features per context, plus what backward needs.

    Features are sorted per column before summation so that the pooled value
    does not depend on tuple order, bit for bit.
    """
    sizes = [len(c) for c in contexts]
    if min(sizes) == 0:
        raise EmptyContextError("empty context")
    if len(set(sizes)) == 1:
        chunks = [np.stack(contexts)]
    else:
        chunks = [c[None] for c in contexts]
    pooled, groups = [], []
    for ch in chunks:
        T, M, d = ch.shape
        feats, tape = forward(enc.feature, ch.reshape(T * M, d))
        F = feats.reshape(T, M, -1)
        pooled.append(np.sort(F, axis=1).sum(axis=1) / M)
        groups.append((tape, T, M))
    return np.concatenate(pooled), groups


def encode(enc: Encoder, contexts, rng: np.random.Generator | None = None):
    """Embed a list of contexts (one per task). Returns (z rows, mean, std, cache)."""
    pooled, groups = _pool(enc, contexts)
    out, head_tape = forward(enc.head, pooled)
    k = enc.latent_dim
    if not enc.probabilistic:
        return out, out, None, _EncodeCache(groups, None, None, head_tape)
    mean, std = out[:, :k], np.exp(out[:, k:])
    eps = rng.standard_normal(mean.shape)
    z = mean + std * eps
    return z, mean, std, _EncodeCache(groups, std, eps, head_tape)


def encode_backward(enc: Encoder, cache: _EncodeCache, grad_z, grad_mean=None, grad_logstd=None):
    """Accumulate encoder gradients given dL/dz (and optional direct mean/log-std terms)."""
    grad_z = np.asarray(grad_z, dtype=np.float64)
    if enc.probabilistic:
        gm = grad_z if grad_mean is None else grad_z + grad_mean
        gl = grad_z * cache.std * cache.eps
        if grad_logstd is not None:
            gl = gl + grad_logstd
        gout = np.hstack([gm, gl])
    else:
        gout = grad_z
    gpooled = backward(enc.head, cache.head_tape, gout)
    row = 0
    for tape, T, M in cache.groups:
        g = gpooled[row:row + T] / M
        row += T
        gF = np.broadcast_to(g[:, None, :], (T, M, g.shape[1])).reshape(T * M, -1)
        backward(enc.feature, tape, gF)


def embed_deterministic(enc: Encoder, c: np.ndarray) -> LatentContext:
    if enc.probabilistic:
        raise ValueError("encoder is probabilistic")
    z, _, _, _ = encode(enc, [np.asarray(c, dtype=np.float64)])
    return LatentContext("deterministic", z[0])


def embed_probabilistic(enc: Encoder, c: np.ndarray, rng: np.random.Generator) -> LatentContext:
    if not enc.probabilistic:
        raise ValueError("encoder is deterministic")
    z, mean, std, cache = encode(enc, [np.asarray(c, dtype=np.float64)], rng)
    return LatentContext("probabilistic", z[0], mean[0], std[0], cache.eps[0])


def latent_penalty(z_batch) -> tuple:
    """Mean L1 norm over the rows of ``z_batch`` and its gradient."""
    z = np.atleast_2d(np.asarray(z_batch, dtype=np.float64))
    if z.size == 0:
        return 0.0, np.zeros_like(z)
    n = z.shape[0]
    return float(np.abs(z).sum() / n), np.sign(z) / n


def kl_to_standard_normal(mean, std) -> tuple:
    """KL(N(mean, std^2) || N(0, I)) summed over dims, averaged over rows; grads w.r.t. mean, log-std."""
    n = mean.shape[0]
    kl = 0.5 * float(np.sum(mean ** 2 + std ** 2 - 2 * np.log(std) - 1)) / n
    return kl, mean / n, (std ** 2 - 1) / n


# --------------------------------------------------------------------------
# training loops


@dataclass
class TrainLog:
    """Per-episode cumulative reward (episodes x tasks) and the task buffers."""

    task_ids: list
    rewards: list = field(default_factory=list)
    abs_error: list = field(default_factory=list)
    buffers: list = field(default_factory=list)

    @property
    def reward_array(self) -> np.ndarray:
        return np.array(self.rewards)


def _latent_dim(enc: Encoder | None) -> int:
    return 0 if enc is None else enc.latent_dim


def rollout_z(enc: Encoder | None, buffers, hp: MetaHyperparams, rng) -> np.ndarray:
    """One z per task from pre-episode context (zero-width when embeddings are disabled)."""
    if enc is None:
        return np.zeros((len(buffers), 0))
    contexts = [context_or_cold_start(b, hp.context_size, rng, hp.recency_window) for b in buffers]
    z, _, _, _ = encode(enc, contexts, rng)
    return z


def rollout(envs, agent: Agent, z: np.ndarray, schedules, explore: bool, rng,
            buffers=None, record: bool = False):
    """Run one episode on every env in lockstep.

    Returns per-env cumulative reward, mean |e|, and (if ``record``) a list of
    per-env trajectories as dicts of arrays.
    """
    states = np.stack([env.reset(sch) for env, sch in zip(envs, schedules)])
    n_steps = envs[0].ep.n_steps
    cum = np.zeros(len(envs))
    abs_err = np.zeros(len(envs))
    traj = [{k: np.zeros(n_steps) for k in ("setpoint", "output", "action", "reward")}
            for _ in envs] if record else None
    for t in range(n_steps):
        actions = select_action(agent, states, z, explore, rng)
        for i, env in enumerate(envs):
            sp = env.ep.setpoint
            tr = env.step(actions[i])
            if buffers is not None:
                buffers[i].insert(tr)
            cum[i] += tr.r
            y = env.ep.y
            abs_err[i] += abs(sp - y)
            states[i] = tr.s_next
            if record:
                tj = traj[i]
                tj["setpoint"][t], tj["output"][t] = sp, y
                tj["action"][t], tj["reward"][t] = tr.a, tr.r
    return cum, abs_err / n_steps, traj


def train_step(agent: Agent, enc: Encoder | None, buffers, hp: MetaHyperparams, rng,
               update_encoder: bool = True):
    """One meta-training update; with ``update_encoder=False`` the encoder stays frozen.

    Returns (sum of critic losses, sum of actor objectives, mean |z|).
    """
    T, N = len(buffers), hp.batch_size
    batch = Batch.concat([b.sample_uniform(N, rng) for b in buffers])
    cache = None
    if enc is None:
        z = np.zeros((T, 0))
    else:
        contexts = [sample_context_recent(b, hp.context_size, rng, hp.recency_window) for b in buffers]
        z, mean, std, cache = encode(enc, contexts, rng)
    zrows = np.repeat(z, N, axis=0)
    lc, gz_rows = critic_loss(batch, zrows, agent, scale=1.0 / N)
    la = actor_loss(batch, zrows, agent, scale=1.0 / N)
    if enc is not None and update_encoder:
        gz = gz_rows.reshape(T, N, -1).sum(axis=1)
        gmean = glog = None
        if enc.probabilistic and hp.pe_regularizer == "kl":
            _, gmean, glog = kl_to_standard_normal(mean, std)
            gmean, glog = hp.beta_latent * T * gmean, hp.beta_latent * T * glog
        else:
            # sum over tasks of beta * |z_i|_1
            _, gpen = latent_penalty(z)
            gz = gz + hp.beta_latent * T * gpen
        encode_backward(enc, cache, gz, gmean, glog)
        optimizer_step(enc.feature, OptimizerConfig(hp.alpha1))
        optimizer_step(enc.head, OptimizerConfig(hp.alpha1))
    optimizer_step(agent.critic, OptimizerConfig(hp.alpha2))
    optimizer_step(agent.actor, OptimizerConfig(hp.alpha3))
    soft_update_targets(agent)
    return lc, la, float(np.abs(z).sum(axis=1).mean()) if z.size else 0.0


def make_envs(tasks, variant: StateVariant, env_cfg: EnvConfig, rng) -> list:
    return [TaskEnv(t, variant, g, env_cfg) for t, g in zip(tasks, rng.spawn(len(tasks)))]


def meta_train(tasks, agent: Agent, enc: Encoder | None, hp: MetaHyperparams, rng,
               variant: StateVariant = StateVariant.MetaBase, env_cfg: EnvConfig | None = None,
               buffers=None, callback=None):
    """Meta-train actor, critic and (unless ``enc`` is None) the embedding network.

    Returns (agent, enc, TrainLog). ``callback(episode, log)`` is called after
    every episode's updates.
    """
    tasks = list(tasks)
    if not tasks:
        raise ValueError("empty task set")
    env_cfg = env_cfg or EnvConfig()
    r_env, r_sched, r_explore, r_ctx, r_train = rng.spawn(5)
    envs = make_envs(tasks, variant, env_cfg, r_env)
    if buffers is None:
        buffers = [ReplayBuffer(variant.dim, hp.buffer_capacity, t.id) for t in tasks]
    log = TrainLog([t.id for t in tasks], buffers=buffers)
    for episode in range(hp.episodes):
        z = rollout_z(enc, buffers, hp, r_ctx)
        schedules = [env_cfg.schedule(r_sched) for _ in tasks]
        cum, err, _ = rollout(envs, agent, z, schedules, True, r_explore, buffers)
        log.rewards.append(cum)
        log.abs_error.append(err)
        for _ in range(hp.train_steps):
            train_step(agent, enc, buffers, hp, r_train)
        if callback is not None:
            callback(episode, log)
    return agent, enc, log


def adapt(test_task: Task, agent: Agent, enc: Encoder | None, hp: MetaHyperparams, rng,
          variant: StateVariant = StateVariant.MetaBase, env_cfg: EnvConfig | None = None,
          schedule=None, episodes: int | None = None, train_steps: int | None = None):
    """Fine-tune actor and critic on a single task with the encoder frozen.

    ``schedule`` (if given) is reused for every episode so that different
    controllers face identical setpoint sequences. Returns a TrainLog.
    """
    env_cfg = env_cfg or EnvConfig()
    episodes = hp.episodes if episodes is None else episodes
    train_steps = hp.train_steps if train_steps is None else train_steps
    r_env, r_sched, r_explore, r_ctx, r_train = rng.spawn(5)
    envs = make_envs([test_task], variant, env_cfg, r_env)
    buffers = [ReplayBuffer(variant.dim, hp.buffer_capacity, test_task.id)]
    log = TrainLog([test_task.id], buffers=buffers)
    for _ in range(episodes):
        z = rollout_z(enc, buffers, hp, r_ctx)
        sch = schedule if schedule is not None else env_cfg.schedule(r_sched)
        cum, err, _ = rollout(envs, agent, z, [sch], True, r_explore, buffers)
        log.rewards.append(cum)
        log.abs_error.append(err)
        for _ in range(train_steps):
            train_step(agent, enc, buffers, hp, r_train, update_encoder=False)
    return log


def evaluate(agent: Agent, enc: Encoder | None, tasks, buffers, hp: MetaHyperparams, schedule,
             rng, variant: StateVariant = StateVariant.MetaBase, env_cfg: EnvConfig | None = None):
    """Noise-free-policy rollouts (no exploration) on each task; z from each task's buffer.

    Returns (cumulative rewards, mean |e|, trajectories).
    """
    env_cfg = env_cfg or EnvConfig()
    r_env, r_ctx = rng.spawn(2)
    envs = make_envs(tasks, variant, env_cfg, r_env)
    z = rollout_z(enc, buffers, hp, r_ctx)
    return rollout(envs, agent, z, [schedule] * len(tasks), False, None, record=True)


def export_embeddings(enc: Encoder, tasks, buffers, n_draws: int, rng, hp: MetaHyperparams) -> list:
    """``n_draws`` context samples per task -> rows of (task_id, z1, z2, z3)."""
    rows = []
    for task, buf in zip(tasks, buffers):
        if len(buf) == 0:
            raise EmptyContextError(f"task {task.id} has an empty buffer")
        contexts = [sample_context_recent(buf, hp.context_size, rng, hp.recency_window)
                    for _ in range(n_draws)]
        z, _, _, _ = encode(enc, contexts, rng)
        rows.extend((task.id, *map(float, zr)) for zr in z)
    return rows
