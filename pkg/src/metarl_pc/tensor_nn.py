"""Small dense networks with hand-written reverse mode and Adam.

All parameters of a network live in one flat float64 vector; the per-layer
weight and bias arrays are views into it. Gradients and Adam moments use the
same layout, so optimizer steps, target blending and checkpointing are single
vector operations.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")


class ShapeError(ValueError):
    pass


class StaleTapeError(RuntimeError):
    pass


@dataclass
class OptimizerConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("moment decay rates must lie in (0, 1)")


def _activate(name, x):
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    return x


def _activation_grad(name, out, g):
    # derivative expressed through the layer output
    if name == "relu":
        return g * (out > 0)
    if name == "tanh":
        return g * (1.0 - out * out)
    return g


class Network:
    """Fully connected network. ``sizes`` = [in, h1, ..., out]."""

    def __init__(self, sizes, activations, rng: np.random.Generator | None = None,
                 final_scale: float | None = None):
        sizes = [int(s) for s in sizes]
        activations = list(activations)
        if len(activations) != len(sizes) - 1:
            raise ShapeError("need one activation per layer")
        for a in activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.sizes = sizes
        self.activations = activations
        n = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
        self.theta = np.zeros(n)
        self.grad = np.zeros(n)
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.version = 0
        self._bind()
        if rng is not None:
            self.init_params(rng, final_scale)

    def _bind(self):
        self.weights, self.biases, self.gweights, self.gbiases = [], [], [], []
        off = 0
        for i, o in zip(self.sizes[:-1], self.sizes[1:]):
            self.weights.append(self.theta[off:off + i * o].reshape(i, o))
            self.gweights.append(self.grad[off:off + i * o].reshape(i, o))
            off += i * o
            self.biases.append(self.theta[off:off + o])
            self.gbiases.append(self.grad[off:off + o])
            off += o

    def init_params(self, rng: np.random.Generator, final_scale: float | None = None):
        """Fan-in uniform init; optional small uniform range for the last layer."""
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            bound = 1.0 / np.sqrt(W.shape[0])
            if k == last and final_scale is not None:
                bound = final_scale
            W[...] = rng.uniform(-bound, bound, size=W.shape)
            b[...] = rng.uniform(-bound, bound, size=b.shape)

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    @property
    def n_params(self) -> int:
        return self.theta.size

    def copy(self) -> "Network":
        other = Network(self.sizes, self.activations)
        for name in ("theta", "grad", "m", "v"):
            np.copyto(getattr(other, name), getattr(self, name))
        other.t = self.t
        return other

    def zero_grad(self):
        self.grad.fill(0.0)

    def checksum(self) -> str:
        return hashlib.sha256(self.theta.tobytes()).hexdigest()

    def __call__(self, x):
        return forward(self, x)[0]


@dataclass
class Tape:
    net_id: int
    version: int
    inputs: list
    outputs: list
    squeeze: bool
    pre: list


def forward(net: Network, x):
    """Returns (output, tape). Rows of a 2-D ``x`` are independent samples."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[-1] != net.in_dim:
        raise ShapeError(f"expected input dim {net.in_dim}, got {x.shape[-1]}")
    inputs, outputs, pre = [], [], []
    h = x
    for W, b, act in zip(net.weights, net.biases, net.activations):
        inputs.append(h)
        p = h @ W + b
        pre.append(p)
        h = _activate(act, p)
        outputs.append(h)
    tape = Tape(id(net), net.version, inputs, outputs, squeeze, pre)
    return (h[0] if squeeze else h), tape


def backward(net: Network, tape: Tape, output_gradient, accumulate: bool = True,
             preact_gradient=None):
    """Backpropagate ``output_gradient``; returns the gradient w.r.t. the input.

    Parameter gradients are added into ``net.grad`` unless ``accumulate`` is
    False, in which case the network is only used as a differentiable map.
    ``preact_gradient`` is added to the gradient of the last layer's
    pre-activation (for penalties on it).
    """
    if tape.net_id != id(net) or tape.version != net.version:
        raise StaleTapeError("tape does not belong to the current parameters of this network")
    g = np.asarray(output_gradient, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != tape.outputs[-1].shape:
        raise ShapeError(f"output gradient shape {g.shape} != {tape.outputs[-1].shape}")
    for k in range(len(net.weights) - 1, -1, -1):
        g = _activation_grad(net.activations[k], tape.outputs[k], g)
        if preact_gradient is not None and k == len(net.weights) - 1:
            g = g + preact_gradient
        if accumulate:
            net.gweights[k] += tape.inputs[k].T @ g
            net.gbiases[k] += g.sum(axis=0)
        g = g @ net.weights[k].T
    return g[0] if tape.squeeze else g


def optimizer_step(net: Network, cfg: OptimizerConfig) -> Network:
    """One Adam descent step on the accumulated gradient, then zero it."""
    net.t += 1
    g = net.grad
    net.m *= cfg.beta1
    net.m += (1.0 - cfg.beta1) * g
    net.v *= cfg.beta2
    net.v += (1.0 - cfg.beta2) * (g * g)
    mhat = net.m / (1.0 - cfg.beta1 ** net.t)
    vhat = net.v / (1.0 - cfg.beta2 ** net.t)
    net.theta -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)
    net.zero_grad()
    net.version += 1
    return net


def soft_update(target: Network, online: Network, blend: float) -> Network:
    if not 0 < blend <= 1:
        raise ValueError("blend must lie in (0, 1]")
    if blend == 1:
        np.copyto(target.theta, online.theta)
    else:
        target.theta *= 1.0 - blend
        target.theta += blend * online.theta
    target.version += 1
    return target


# checkpoints ---------------------------------------------------------------

def network_arrays(prefix: str, net: Network) -> dict:
    """Flat-array view of a network for ``np.savez``; includes its shape header."""
    header = json.dumps({"sizes": net.sizes, "activations": net.activations, "t": net.t})
    return {f"{prefix}/theta": net.theta, f"{prefix}/m": net.m, f"{prefix}/v": net.v,
            f"{prefix}/header": np.array(header)}


def network_from_arrays(prefix: str, arrays) -> Network:
    header = json.loads(str(arrays[f"{prefix}/header"]))
    net = Network(header["sizes"], header["activations"])
    for name in ("theta", "m", "v"):
        src = arrays[f"{prefix}/{name}"]
        if src.shape != getattr(net, name).shape:
            raise ShapeError(f"{prefix}/{name}: stored shape {src.shape} does not match header")
        np.copyto(getattr(net, name), src)
    net.t = int(header["t"])
    return net


def save_networks(path, **nets: Network):
    arrays = {}
    for name, net in nets.items():
        arrays.update(network_arrays(name, net))
    np.savez(path, **arrays)


def load_networks(path) -> dict:
    with np.load(path) as f:
        names = sorted({k.split("/")[0] for k in f.files if k.endswith("/header")})
        return {name: network_from_arrays(name, f) for name in names}
