"""Discrete-time SISO plants of the form K / (tau*s + 1)^n.

The cascade of n lags is sampled exactly under a zero-order hold, so the
simulated output equals the continuous response at the sample instants.
For n = 1 this is the familiar x+ = a*x + (1 - a)*K*u with a = exp(-dt/tau).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

DEFAULT_DT = 0.5
DEFAULT_NOISE_STD = 0.01


class InvalidPlantSpec(ValueError):
    pass


@dataclass(frozen=True)
class TransferFunctionSpec:
    gain: float
    time_constant: float
    order: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.time_constant) and self.time_constant > 0):
            raise InvalidPlantSpec(f"time_constant must be positive, got {self.time_constant}")
        if int(self.order) != self.order or self.order < 1:
            raise InvalidPlantSpec(f"order must be a positive integer, got {self.order}")
        if not math.isfinite(self.gain) or self.gain == 0:
            raise InvalidPlantSpec(f"gain must be finite and nonzero, got {self.gain}")

    def label(self) -> str:
        den = f"({self.time_constant:g}s+1)"
        if self.order > 1:
            den += f"^{self.order}"
        return f"{self.gain:g}/{den}"


@dataclass
class PlantModel:
    """Sampled cascade of identical first-order lags.

    ``pole`` holds exp(-dt/tau) for each stage; ``Ad``/``Bd`` are the exact
    ZOH state matrices of the whole chain (state i = output of stage i).
    """

    gain: float
    pole: np.ndarray
    Ad: np.ndarray
    Bd: np.ndarray
    dt: float = DEFAULT_DT
    noise_std: float = DEFAULT_NOISE_STD
    state: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.state is None:
            self.state = np.zeros_like(self.pole)

    @property
    def n_stages(self) -> int:
        return len(self.pole)

    @property
    def input_coef(self) -> np.ndarray:
        """Unit-DC-gain stage input weights, 1 - a."""
        return 1.0 - self.pole

    @property
    def output(self) -> float:
        """Noise-free output (last stage state)."""
        return float(self.state[-1])

    def step(self, u: float, rng: np.random.Generator) -> float:
        return step(self, u, rng)

    def reset(self, initial_output: float = 0.0) -> "PlantModel":
        return reset(self, initial_output)


def discretize(spec: TransferFunctionSpec, dt: float = DEFAULT_DT,
               noise_std: float = DEFAULT_NOISE_STD) -> PlantModel:
    if not (math.isfinite(dt) and dt > 0):
        raise InvalidPlantSpec(f"dt must be positive, got {dt}")
    if noise_std < 0:
        raise InvalidPlantSpec(f"noise_std must be non-negative, got {noise_std}")
    n, tau = spec.order, spec.time_constant
    a = math.exp(-dt / tau)
    if n == 1:
        Ad = np.array([[a]])
        Bd = np.array([spec.gain * (1.0 - a)])
    else:
        # x_i' = (x_{i-1} - x_i) / tau with x_0 = K u; exact ZOH via the augmented exponential
        A = (np.eye(n, k=-1) - np.eye(n)) / tau
        aug = np.zeros((n + 1, n + 1))
        aug[:n, :n] = A * dt
        aug[0, n] = spec.gain / tau * dt
        E = expm(aug)
        Ad, Bd = E[:n, :n], E[:n, n].copy()
    return PlantModel(gain=float(spec.gain), pole=np.full(n, a), Ad=Ad, Bd=Bd,
                      dt=float(dt), noise_std=float(noise_std))


def step(model: PlantModel, u: float, rng: np.random.Generator | None) -> float:
    """Advance one sample with input ``u`` held constant; return the measured output."""
    u = float(u)
    if not math.isfinite(u):
        raise ValueError(f"non-finite control input {u}")
    if len(model.state) == 1:
        model.state[0] = model.Ad[0, 0] * model.state[0] + model.Bd[0] * u
    else:
        model.state = model.Ad @ model.state + model.Bd * u
    y = float(model.state[-1])
    if model.noise_std > 0:
        y += model.noise_std * rng.standard_normal()
    return y


def reset(model: PlantModel, initial_output: float = 0.0) -> PlantModel:
    # every stage at the same value is the steady state for output y0
    model.state = np.full(model.n_stages, float(initial_output))
    return model
