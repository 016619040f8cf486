"""Small dense networks with hand-written reverse-mode gradients and RMSProp.

Everything here is a pure function of its inputs: ``rmsprop_apply`` returns new
parameter and optimizer-state objects instead of mutating the old ones, which
lets the trainer publish snapshots by swapping a single reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ar_a3c.errors import DivergenceError

ACTIVATIONS = ("tanh", "relu", "identity", "softplus")


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "identity":
        return z
    if name == "softplus":
        return np.logaddexp(0.0, z)
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "identity":
        return np.ones_like(z)
    if name == "softplus":
        return sigmoid(z)
    raise ValueError(f"unknown activation {name!r}")


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class MlpParams:
    """Weights ``(out, in)``, biases ``(out,)`` and one activation tag per layer."""

    weights: tuple
    biases: tuple
    activations: tuple

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases and activations must have one entry per layer")
        for k, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if act not in ACTIVATIONS:
                raise ValueError(f"layer {k}: unknown activation {act!r}")
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {k}: weight {w.shape} and bias {b.shape} do not match")
            if k > 0 and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(
                    f"layer {k} expects {w.shape[1]} inputs but layer {k - 1} produces "
                    f"{self.weights[k - 1].shape[0]}"
                )

    @property
    def sizes(self) -> tuple:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        return MlpParams(tuple(arrays[0::2]), tuple(arrays[1::2]), self.activations)

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())


@dataclass(frozen=True)
class Grads:
    weights: tuple
    biases: tuple

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


@dataclass(frozen=True)
class Tape:
    inputs: tuple
    preacts: tuple
    outputs: tuple
    batched: bool


def init_mlp(sizes: Sequence[int], activations: Sequence[str], rng) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases."""
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(tuple(weights), tuple(biases), tuple(activations))


def zeros_like(params: MlpParams) -> Grads:
    return Grads(
        tuple(np.zeros_like(w) for w in params.weights),
        tuple(np.zeros_like(b) for b in params.biases),
    )


def forward(params: MlpParams, x) -> tuple[np.ndarray, Tape]:
    """Evaluate the network on one input vector or a ``(batch, in)`` matrix."""
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    h = x if batched else x[None, :]
    n_in = params.weights[0].shape[1]
    if h.ndim != 2 or h.shape[1] != n_in:
        raise ValueError(f"input has shape {x.shape}, network expects {n_in} features")
    inputs, preacts, outputs = [], [], []
    for w, b, act in zip(params.weights, params.biases, params.activations):
        inputs.append(h)
        z = h @ w.T + b
        h = _activate(act, z)
        preacts.append(z)
        outputs.append(h)
    tape = Tape(tuple(inputs), tuple(preacts), tuple(outputs), batched)
    return (h if batched else h[0]), tape


def backward(params: MlpParams, tape: Tape, output_grad) -> Grads:
    """Gradients of ``sum(output * output_grad)`` with respect to every parameter."""
    if len(tape.inputs) != len(params.weights):
        raise ValueError("tape was recorded on a network with a different depth")
    g = np.asarray(output_grad, dtype=np.float64)
    if not tape.batched:
        g = g[None, :]
    if g.shape != tape.outputs[-1].shape:
        raise ValueError(f"output_grad has shape {g.shape}, expected {tape.outputs[-1].shape}")
    n = len(params.weights)
    dws, dbs = [None] * n, [None] * n
    for k in range(n - 1, -1, -1):
        w = params.weights[k]
        if tape.inputs[k].shape[1] != w.shape[1] or tape.preacts[k].shape[1] != w.shape[0]:
            raise ValueError(f"tape does not match layer {k} of shape {w.shape}")
        dz = g * _activation_grad(params.activations[k], tape.preacts[k], tape.outputs[k])
        dws[k] = dz.T @ tape.inputs[k]
        dbs[k] = dz.sum(axis=0)
        if k:
            g = dz @ w
    return Grads(tuple(dws), tuple(dbs))


@dataclass(frozen=True)
class RmsPropState:
    """Running mean of squared gradients, one cache array per parameter array."""

    cache: tuple
    learning_rate: float
    decay: float = 0.9
    epsilon: float = 1e-10
    steps: int = field(default=0)

    @classmethod
    def for_params(cls, params: MlpParams, learning_rate: float, decay: float = 0.9, epsilon: float = 1e-10):
        return cls(tuple(np.zeros_like(a) for a in params.arrays()), learning_rate, decay, epsilon)


def rmsprop_apply(params: MlpParams, grads: Grads, state: RmsPropState) -> tuple[MlpParams, RmsPropState]:
    """One RMSProp step: ``cache = rho*cache + (1-rho)*g**2``; ``p -= lr*g/(sqrt(cache)+eps)``."""
    p_arrays = params.arrays()
    g_arrays = grads.arrays()
    if len(g_arrays) != len(p_arrays) or len(state.cache) != len(p_arrays):
        raise ValueError("params, grads and optimizer state have different layouts")
    new_params, new_cache = [], []
    rho, lr, eps = state.decay, state.learning_rate, state.epsilon
    for p, g, c in zip(p_arrays, g_arrays, state.cache):
        if g.shape != p.shape or c.shape != p.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, cache {c.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient; training has diverged")
        c2 = rho * c + (1.0 - rho) * g * g
        new_cache.append(c2)
        new_params.append(p - lr * g / (np.sqrt(c2) + eps))
    return (
        params.with_arrays(new_params),
        RmsPropState(tuple(new_cache), lr, rho, eps, state.steps + 1),
    )
