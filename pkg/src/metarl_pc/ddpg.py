"""Latent-conditioned DDPG: replay buffers, actor/critic losses, target networks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import ACTION_BOUND, Transition
from .tensor_nn import Network, backward, forward, soft_update


class EmptyBufferError(ValueError):
    pass


@dataclass
class DDPGConfig:
    hidden: tuple = (64, 64)
    gamma: float = 0.99
    target_blend: float = 0.005
    action_bound: float = ACTION_BOUND
    explore_std: float = 0.1 * ACTION_BOUND
    final_scale: float = 1e-3
    preact_penalty: float = 0.1

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray

    def __len__(self):
        return len(self.a)

    @classmethod
    def concat(cls, batches) -> "Batch":
        return cls(*(np.concatenate([getattr(b, f) for b in batches])
                     for f in ("s", "a", "r", "s_next", "done")))


class ReplayBuffer:
    """Fixed-capacity ring of transitions for one task."""

    def __init__(self, state_dim: int, capacity: int = 100_000, task_id: int = 0):
        self.state_dim = state_dim
        self.capacity = int(capacity)
        self.task_id = task_id
        self.s = np.zeros((self.capacity, state_dim))
        self.s_next = np.zeros((self.capacity, state_dim))
        self.a = np.zeros(self.capacity)
        self.r = np.zeros(self.capacity)
        self.done = np.zeros(self.capacity)
        self.cursor = 0
        self.size = 0
        self.n_inserted = 0

    def __len__(self):
        return self.size

    def insert(self, tr: Transition):
        i = self.cursor
        self.s[i] = tr.s
        self.a[i] = tr.a
        self.r[i] = tr.r
        self.s_next[i] = tr.s_next
        self.done[i] = float(tr.done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.n_inserted += 1

    def chronological(self) -> np.ndarray:
        """Storage indices, oldest first."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (self.cursor + np.arange(self.capacity)) % self.capacity

    def recent_indices(self, window: int) -> np.ndarray:
        return self.chronological()[-int(window):]

    def take(self, idx) -> Batch:
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.done[idx])

    def transition(self, k: int) -> Transition:
        """k-th oldest stored transition."""
        i = self.chronological()[k]
        return Transition(self.s[i].copy(), float(self.a[i]), float(self.r[i]),
                          self.s_next[i].copy(), bool(self.done[i]), self.task_id)

    def sample_uniform(self, n: int, rng: np.random.Generator) -> Batch:
        if self.size == 0:
            raise EmptyBufferError(f"buffer for task {self.task_id} is empty")
        return self.take(rng.integers(0, self.size, size=n))

    def to_arrays(self, prefix: str) -> dict:
        idx = self.chronological()
        meta = np.array([self.capacity, self.task_id, self.n_inserted, self.state_dim])
        return {f"{prefix}/meta": meta, f"{prefix}/s": self.s[idx], f"{prefix}/a": self.a[idx],
                f"{prefix}/r": self.r[idx], f"{prefix}/s_next": self.s_next[idx],
                f"{prefix}/done": self.done[idx]}

    @classmethod
    def from_arrays(cls, prefix: str, arrays) -> "ReplayBuffer":
        capacity, task_id, n_inserted, state_dim = (int(v) for v in arrays[f"{prefix}/meta"])
        buf = cls(state_dim, capacity, task_id)
        n = len(arrays[f"{prefix}/a"])
        for name in ("s", "a", "r", "s_next", "done"):
            getattr(buf, name)[:n] = arrays[f"{prefix}/{name}"]
        buf.size = n
        buf.cursor = n % capacity
        buf.n_inserted = n_inserted
        return buf


def buffer_insert(buffer: ReplayBuffer, tr: Transition) -> ReplayBuffer:
    buffer.insert(tr)
    return buffer


def buffer_sample_uniform(buffer: ReplayBuffer, n: int, rng: np.random.Generator) -> Batch:
    return buffer.sample_uniform(n, rng)


class Agent:
    """Actor and critic with slow target copies; both see (state, z)."""

    def __init__(self, state_dim: int, latent_dim: int, cfg: DDPGConfig | None = None,
                 rng: np.random.Generator | None = None):
        self.cfg = cfg or DDPGConfig()
        self.state_dim = state_dim
        self.latent_dim = latent_dim
        h = list(self.cfg.hidden)
        n_hidden = len(h)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.actor = Network([state_dim + latent_dim, *h, 1], ["relu"] * n_hidden + ["tanh"],
                             rng, self.cfg.final_scale)
        self.critic = Network([state_dim + latent_dim + 1, *h, 1],
                              ["relu"] * n_hidden + ["identity"], rng, self.cfg.final_scale)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()

    @classmethod
    def from_networks(cls, nets: dict, latent_dim: int, cfg: DDPGConfig | None = None) -> "Agent":
        """Rebuild an agent around existing networks (e.g. loaded from a checkpoint)."""
        agent = object.__new__(cls)
        agent.cfg = cfg or DDPGConfig()
        agent.actor, agent.critic = nets["actor"], nets["critic"]
        agent.actor_target, agent.critic_target = nets["actor_target"], nets["critic_target"]
        agent.latent_dim = latent_dim
        agent.state_dim = agent.actor.in_dim - latent_dim
        return agent

    @property
    def gamma(self) -> float:
        return self.cfg.gamma

    def networks(self) -> dict:
        return {"actor": self.actor, "critic": self.critic,
                "actor_target": self.actor_target, "critic_target": self.critic_target}


def _rows(x):
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


def policy(agent: Agent, s, z, target: bool = False) -> np.ndarray:
    """Deterministic action(s) for stacked (s, z) rows."""
    net = agent.actor_target if target else agent.actor
    out, _ = forward(net, np.hstack([_rows(s), _rows(z)]))
    return agent.cfg.action_bound * out[:, 0]


def q_value(agent: Agent, s, z, a, target: bool = False) -> np.ndarray:
    net = agent.critic_target if target else agent.critic
    a = np.asarray(a, dtype=np.float64).reshape(-1, 1)
    out, _ = forward(net, np.hstack([_rows(s), _rows(z), a]))
    return out[:, 0]


def select_action(agent: Agent, s, z, explore: bool, rng: np.random.Generator | None):
    """Actor output plus optional Gaussian noise, clamped to the action bound."""
    s_rows, z_rows = _rows(s), _rows(z)
    if s_rows.shape[1] + z_rows.shape[1] != agent.actor.in_dim:
        raise ValueError("state/latent dimensions do not match the actor input")
    a = policy(agent, s_rows, z_rows)
    if explore:
        a = a + agent.cfg.explore_std * rng.standard_normal(a.shape)
    bound = agent.cfg.action_bound
    a = np.clip(a, -bound, bound)
    return float(a[0]) if np.ndim(s) == 1 else a


def critic_target(r, s_next, z, agent: Agent, done=False):
    """r + gamma * Q'(s', pi'(s')), cut to r on terminal transitions."""
    scalar = np.ndim(r) == 0
    r = np.asarray(r, dtype=np.float64)
    s_next, z = _rows(s_next), _rows(z)
    a_next = policy(agent, s_next, z, target=True)
    q_next = q_value(agent, s_next, z, a_next, target=True)
    not_done = 1.0 - np.asarray(done, dtype=np.float64)
    out = r + agent.gamma * not_done * q_next
    return float(out[0]) if scalar else out


def critic_loss(batch: Batch, z_batch, agent: Agent, scale: float | None = None,
                targets=None):
    """Squared TD error; accumulates critic gradients.

    Returns ``(loss, grad_z)`` where ``grad_z`` has one row per transition.
    ``scale`` defaults to 1/N; stacked multi-task batches pass 1/N_task so
    the loss is the sum of per-task means.
    """
    n = len(batch)
    if n == 0:
        raise ValueError("empty batch")
    scale = 1.0 / n if scale is None else scale
    z_batch = _rows(z_batch)
    if targets is None:
        targets = critic_target(batch.r, batch.s_next, z_batch, agent, batch.done)
    x = np.hstack([batch.s, z_batch, batch.a.reshape(-1, 1)])
    q, tape = forward(agent.critic, x)
    diff = q[:, 0] - targets
    loss = scale * float(diff @ diff)
    gx = backward(agent.critic, tape, (2.0 * scale * diff)[:, None])
    ds = batch.s.shape[1]
    return loss, gx[:, ds:ds + z_batch.shape[1]]


def actor_loss(batch: Batch, z_batch, agent: Agent, scale: float | None = None):
    """Mean Q of the actor's own actions; accumulates the ascent direction into the actor.

    The critic is used as a fixed map: its accumulators are not touched. The
    actor gradient stored is that of the negated objective, so a descent step
    on it is an ascent step on the objective.
    """
    n = len(batch)
    if n == 0:
        raise ValueError("empty batch")
    scale = 1.0 / n if scale is None else scale
    z_batch = _rows(z_batch)
    sz = np.hstack([batch.s, z_batch])
    out, a_tape = forward(agent.actor, sz)
    bound = agent.cfg.action_bound
    q, c_tape = forward(agent.critic, np.hstack([sz, bound * out]))
    objective = scale * float(q.sum())
    gx = backward(agent.critic, c_tape, np.full_like(q, -scale), accumulate=False)
    lam = agent.cfg.preact_penalty
    gpre = 2.0 * lam * scale * a_tape.pre[-1] if lam else None
    backward(agent.actor, a_tape, bound * gx[:, -1:], preact_gradient=gpre)
    return objective


def soft_update_targets(agent: Agent, blend: float | None = None) -> Agent:
    blend = agent.cfg.target_blend if blend is None else blend
    soft_update(agent.actor_target, agent.actor, blend)
    soft_update(agent.critic_target, agent.critic, blend)
    return agent
