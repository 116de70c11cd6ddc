"""Experiment configuration: one flat dataclass, named presets, YAML files.

A config file is a flat YAML mapping of field names to values. The optional
``preset`` key names a preset whose values are applied first; every other
key in the file then overrides them. Unknown keys and nested mappings are
rejected. See the README for the full grammar.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..ddpg import DDPGConfig
from ..env import EnvConfig, Experiment
from ..meta_embed import MetaHyperparams
from ..plant_sim import DEFAULT_DT, DEFAULT_NOISE_STD

VARIANTS = ("DE", "PE", "NoEmbed", "Scratch")
STAGES = ("generalize", "adapt", "export")


class ConfigError(ValueError):
    pass


PRESETS = {
    "binary-gain": dict(
        experiment="BinaryGain", stage="generalize", variants=["DE", "NoEmbed"],
        episodes=100, train_steps=200),
    "first-order-generalize": dict(
        experiment="FirstOrderDynamics", stage="generalize", variants=["DE", "PE", "NoEmbed"],
        episodes=60, train_steps=100),
    "first-order-adapt": dict(
        experiment="FirstOrderDynamics", stage="adapt", variants=["DE", "Scratch"],
        episodes=60, train_steps=100, adapt_episodes=40, adapt_train_steps=100),
    "embedding-export": dict(
        experiment="FirstOrderDynamics", stage="export", variants=["DE"],
        episodes=60, train_steps=100),
    "objectives-generalize": dict(
        experiment="ControlObjectives", stage="generalize", variants=["DE", "PE", "NoEmbed"],
        episodes=300, train_steps=200),
    "objectives-adapt": dict(
        experiment="ControlObjectives", stage="adapt", variants=["PE", "Scratch"],
        episodes=300, train_steps=200, adapt_episodes=40, adapt_train_steps=100),
}


@dataclass
class ExperimentConfig:
    preset: str = "binary-gain"
    experiment: str = "BinaryGain"
    stage: str = "generalize"
    variants: list = field(default_factory=lambda: ["DE"])
    base_seed: int = 0
    seed_count: int = 10
    jobs: int = 1
    out_dir: str | None = None

    # task set
    gains: list = field(default_factory=lambda: [-2.0, -1.0, 1.0, 2.0])
    time_constants: list = field(default_factory=lambda: [0.5, 1.0, 1.5, 2.0])
    held_out_gain: float = -1.0
    held_out_time_constant: float = 2.0
    penalty_alpha: float = 0.1
    penalty_beta_action: float = 0.1
    penalty_delta: float = 0.5

    # meta-learning
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
    adapt_episodes: int = 40
    adapt_train_steps: int = 100
    embedding_draws: int = 10

    # networks
    hidden: list = field(default_factory=lambda: [64, 64])
    encoder_hidden: list = field(default_factory=lambda: [64, 64])
    feature_dim: int = 32
    latent_dim: int = 3
    gamma: float = 0.99
    target_blend: float = 0.005
    explore_std: float = 0.2
    final_scale: float = 1e-3
    preact_penalty: float = 0.1

    # environment
    dt: float = DEFAULT_DT
    noise_std: float = DEFAULT_NOISE_STD
    n_setpoints: int = 10
    steps_per_setpoint: int = 20
    setpoint_low: float = 0.1
    setpoint_high: float = 1.0
    action_bound: float = 2.0
    overshoot_sign_as_printed: bool = False

    checkpoint_buffers: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        try:
            Experiment(self.experiment)
        except ValueError:
            raise ConfigError(f"unknown experiment {self.experiment!r}") from None
        if self.stage not in STAGES:
            raise ConfigError(f"unknown stage {self.stage!r}")
        if isinstance(self.variants, str):
            self.variants = [self.variants]
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}; choose from {VARIANTS}")
        if self.seed_count < 1 or self.jobs < 1:
            raise ConfigError("seed_count and jobs must be positive")
        if self.stage == "export" and any(v in ("NoEmbed", "Scratch") for v in self.variants):
            raise ConfigError("embedding export needs an embedding variant (DE or PE)")

    @property
    def seeds(self) -> list:
        return list(range(self.base_seed, self.base_seed + self.seed_count))

    def meta_hyperparams(self) -> MetaHyperparams:
        names = {f.name for f in dataclasses.fields(MetaHyperparams)}
        return MetaHyperparams(**{k: getattr(self, k) for k in names})

    def ddpg_config(self) -> DDPGConfig:
        return DDPGConfig(hidden=tuple(self.hidden), gamma=self.gamma,
                          target_blend=self.target_blend, action_bound=self.action_bound,
                          explore_std=self.explore_std, final_scale=self.final_scale,
                          preact_penalty=self.preact_penalty)

    def env_config(self) -> EnvConfig:
        return EnvConfig(dt=self.dt, noise_std=self.noise_std, n_setpoints=self.n_setpoints,
                         steps_per_setpoint=self.steps_per_setpoint,
                         setpoint_low=self.setpoint_low, setpoint_high=self.setpoint_high,
                         action_bound=self.action_bound)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def _check_flat(values: dict, where: str):
    for key, val in values.items():
        if key not in FIELDS:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if isinstance(val, dict):
            raise ConfigError(f"{where}: key {key!r} holds a nested mapping; the format is flat")


def resolve(preset: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then the preset, then ``overrides`` (which may name the preset itself)."""
    overrides = dict(overrides or {})
    _check_flat(overrides, "overrides")
    name = overrides.pop("preset", None) or preset
    if name is None:
        raise ConfigError("no preset given")
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    values = dict(PRESETS[name], preset=name)
    values.update(overrides)
    return ExperimentConfig(**values)


def read_config_file(path) -> dict:
    text = Path(path).read_text()
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping of keys to values")
    _check_flat(data, str(path))
    return data


def load_config(path, preset: str | None = None, **overrides) -> ExperimentConfig:
    values = read_config_file(path)
    if preset is not None and values.get("preset") not in (None, preset):
        raise ConfigError(f"{path} names preset {values['preset']!r} but {preset!r} was requested")
    values.update({k: v for k, v in overrides.items() if v is not None})
    return resolve(preset, values)


def dump_config(cfg: ExperimentConfig, path):
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
