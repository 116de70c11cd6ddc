"""Setpoint-tracking environments: tasks, state vectors, rewards, episodes."""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field, asdict

import numpy as np

from .plant_sim import (DEFAULT_DT, DEFAULT_NOISE_STD, PlantModel, TransferFunctionSpec,
                        discretize)

HISTORY = 4
ACTION_BOUND = 2.0
SETPOINT_RANGE = (0.1, 1.0)
N_SETPOINTS = 10
STEPS_PER_SETPOINT = 20


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = 0.0
    beta_action: float = 0.0
    delta: float = 0.0
    overshoot_sign_as_printed: bool = False

    def __post_init__(self):
        for name in ("alpha", "beta_action", "delta"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    @property
    def is_basic(self) -> bool:
        return self.alpha == 0 and self.beta_action == 0 and self.delta == 0


class StateVariant(enum.Enum):
    MetaBase = "MetaBase"
    NoEmbedDynamics = "NoEmbedDynamics"
    NoEmbedObjectives = "NoEmbedObjectives"

    @property
    def dim(self) -> int:
        return {"MetaBase": 6, "NoEmbedDynamics": 10, "NoEmbedObjectives": 14}[self.value]


class Experiment(enum.Enum):
    BinaryGain = "BinaryGain"
    FirstOrderDynamics = "FirstOrderDynamics"
    ControlObjectives = "ControlObjectives"


@dataclass(frozen=True)
class Task:
    id: int
    plant: TransferFunctionSpec
    reward: RewardConfig = RewardConfig()
    role: str = "train"

    def to_dict(self) -> dict:
        return {"id": self.id, "role": self.role, "plant": asdict(self.plant),
                "reward": asdict(self.reward)}

    @classmethod
    def from_dict(cls, d: dict) -> "Task":
        return cls(id=int(d["id"]), plant=TransferFunctionSpec(**d["plant"]),
                   reward=RewardConfig(**d["reward"]), role=d.get("role", "train"))


@dataclass
class EpisodeState:
    """Per-episode bookkeeping. Histories are newest-first."""

    outputs: deque
    actions: deque
    rewards: deque
    setpoint: float
    integral: float
    y_ref: float
    schedule: tuple
    steps_per_setpoint: int = STEPS_PER_SETPOINT
    step_index: int = 0
    dt: float = DEFAULT_DT

    @property
    def y(self) -> float:
        return self.outputs[0]

    @property
    def error(self) -> float:
        return self.setpoint - self.outputs[0]

    @property
    def n_steps(self) -> int:
        return len(self.schedule) * self.steps_per_setpoint

    @property
    def done(self) -> bool:
        return self.step_index >= self.n_steps


def new_episode(schedule, initial_output: float = 0.0,
                steps_per_setpoint: int = STEPS_PER_SETPOINT, dt: float = DEFAULT_DT) -> EpisodeState:
    """Fresh episode; output history padded with the initial output, the rest with zeros."""
    schedule = tuple(float(v) for v in schedule)
    return EpisodeState(
        outputs=deque([initial_output] * HISTORY, maxlen=HISTORY),
        actions=deque([0.0] * HISTORY, maxlen=HISTORY),
        rewards=deque([0.0] * HISTORY, maxlen=HISTORY),
        setpoint=schedule[0], integral=0.0, y_ref=initial_output,
        schedule=schedule, steps_per_setpoint=steps_per_setpoint, dt=dt)


def build_state(ep: EpisodeState, variant: StateVariant) -> np.ndarray:
    parts = list(ep.outputs)
    if variant is not StateVariant.MetaBase:
        parts += list(ep.actions)
    if variant is StateVariant.NoEmbedObjectives:
        parts += list(ep.rewards)
    parts += [ep.error, ep.integral]
    return np.array(parts, dtype=np.float64)


def reward_basic(e: float) -> float:
    return -abs(e)


def overshoot_fires(y_sp: float, y_t: float, y_ref: float, as_printed: bool = False) -> bool:
    """True when the tracking error has flipped sign relative to the reference output."""
    # compare signs directly; the product of two tiny errors can underflow to zero
    e, e_ref = y_sp - y_t, y_sp - y_ref
    if e == 0 or e_ref == 0:
        return False
    same = (e > 0) == (e_ref > 0)
    return same if as_printed else not same


def reward_extended(y_sp: float, y_t: float, a_t: float, a_prev: float, y_ref: float,
                    cfg: RewardConfig) -> float:
    cost = abs(y_sp - y_t) + cfg.alpha * abs(a_t - a_prev) + cfg.beta_action * abs(a_t)
    if cfg.delta and overshoot_fires(y_sp, y_t, y_ref, cfg.overshoot_sign_as_printed):
        cost += cfg.delta
    return -cost


def setpoint_schedule(rng: np.random.Generator, n_changes: int = N_SETPOINTS,
                      range_: tuple = SETPOINT_RANGE,
                      steps_per_setpoint: int = STEPS_PER_SETPOINT) -> tuple:
    """Uniform setpoints in ``range_``; consecutive values are distinct.

    ``steps_per_setpoint`` is carried by the episode, not the schedule; it is
    accepted here so call sites read like the episode shape they build.
    """
    low, high = range_
    if n_changes < 1 or not low < high:
        raise ValueError("need n_changes >= 1 and low < high")
    out = []
    while len(out) < n_changes:
        v = float(rng.uniform(low, high))
        if out and v == out[-1]:
            continue
        out.append(v)
    return tuple(out)


@dataclass
class Transition:
    s: np.ndarray
    a: float
    r: float
    s_next: np.ndarray
    done: bool
    task_id: int


def env_step(task: Task, plant: PlantModel, ep: EpisodeState, a_t: float,
             rng: np.random.Generator, variant: StateVariant = StateVariant.MetaBase,
             action_bound: float = ACTION_BOUND):
    """Apply ``a_t`` for one sample. Mutates ``plant`` and ``ep``."""
    a_t = float(a_t)
    if not math.isfinite(a_t):
        raise ValueError(f"non-finite action {a_t}")
    a_t = min(max(a_t, -action_bound), action_bound)
    s = build_state(ep, variant)
    y = plant.step(a_t, rng)
    ep.step_index += 1
    a_prev = ep.actions[0]
    if task.reward.is_basic:
        r = reward_basic(ep.setpoint - y)
    else:
        r = reward_extended(ep.setpoint, y, a_t, a_prev, ep.y_ref, task.reward)
    ep.outputs.appendleft(y)
    ep.actions.appendleft(a_t)
    ep.rewards.appendleft(r)
    ep.integral += (ep.setpoint - y) * ep.dt
    k = ep.step_index // ep.steps_per_setpoint
    if ep.step_index % ep.steps_per_setpoint == 0 and k < len(ep.schedule):
        ep.setpoint = ep.schedule[k]
        ep.y_ref = y
    s_next = build_state(ep, variant)
    return Transition(s, a_t, r, s_next, ep.done, task.id), ep


@dataclass
class EnvConfig:
    dt: float = DEFAULT_DT
    noise_std: float = DEFAULT_NOISE_STD
    n_setpoints: int = N_SETPOINTS
    steps_per_setpoint: int = STEPS_PER_SETPOINT
    setpoint_low: float = SETPOINT_RANGE[0]
    setpoint_high: float = SETPOINT_RANGE[1]
    action_bound: float = ACTION_BOUND
    initial_output: float = 0.0

    @property
    def episode_steps(self) -> int:
        return self.n_setpoints * self.steps_per_setpoint

    def schedule(self, rng: np.random.Generator) -> tuple:
        return setpoint_schedule(rng, self.n_setpoints, (self.setpoint_low, self.setpoint_high),
                                 self.steps_per_setpoint)


class TaskEnv:
    """A task bound to its own plant instance and noise stream."""

    def __init__(self, task: Task, variant: StateVariant = StateVariant.MetaBase,
                 rng: np.random.Generator | None = None, cfg: EnvConfig | None = None):
        self.task = task
        self.variant = variant
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg or EnvConfig()
        self.plant = discretize(task.plant, self.cfg.dt, self.cfg.noise_std)
        self.ep: EpisodeState | None = None

    @property
    def state_dim(self) -> int:
        return self.variant.dim

    def reset(self, schedule) -> np.ndarray:
        self.plant.reset(self.cfg.initial_output)
        self.ep = new_episode(schedule, self.cfg.initial_output, self.cfg.steps_per_setpoint,
                              self.plant.dt)
        return build_state(self.ep, self.variant)

    def step(self, a: float) -> Transition:
        tr, _ = env_step(self.task, self.plant, self.ep, a, self.rng, self.variant,
                         self.cfg.action_bound)
        return tr


FIRST_ORDER_GAINS = (-2.0, -1.0, 1.0, 2.0)
FIRST_ORDER_TAUS = (0.5, 1.0, 1.5, 2.0)
FIRST_ORDER_TEST = (-1.0, 2.0)
OBJECTIVE_PENALTY = {"alpha": 0.1, "beta_action": 0.1, "delta": 0.5}


def make_task_set(experiment, gains=FIRST_ORDER_GAINS, taus=FIRST_ORDER_TAUS,
                  held_out=FIRST_ORDER_TEST, penalties=None) -> list:
    """Task list for one of the three experiments; test tasks carry role 'test'."""
    experiment = Experiment(experiment)
    if experiment is Experiment.BinaryGain:
        return [Task(0, TransferFunctionSpec(1.0, 1.0)),
                Task(1, TransferFunctionSpec(-1.0, 1.0))]
    if experiment is Experiment.FirstOrderDynamics:
        tasks = []
        for k in gains:
            for tau in taus:
                if (k, tau) == tuple(held_out):
                    continue
                tasks.append(Task(len(tasks), TransferFunctionSpec(k, tau)))
        tasks.append(Task(len(tasks), TransferFunctionSpec(*held_out), role="test"))
        return tasks
    p = dict(OBJECTIVE_PENALTY, **(penalties or {}))
    plant = TransferFunctionSpec(1.0, 1.0, order=3)
    configs = [RewardConfig(),
               RewardConfig(alpha=p["alpha"]),
               RewardConfig(beta_action=p["beta_action"]),
               RewardConfig(delta=p["delta"])]
    tasks = [Task(i, plant, cfg) for i, cfg in enumerate(configs)]
    tasks.append(Task(len(tasks), plant, RewardConfig(alpha=p["alpha"], beta_action=p["beta_action"]),
                      role="test"))
    return tasks
