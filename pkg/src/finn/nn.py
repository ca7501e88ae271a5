"""Small feedforward network, ADAM optimizer, and named-parameter container.

The network maps a concentration-like scalar through tanh hidden layers to a
sigmoid output that is multiplied by a learnable positive scale, so its output
is strictly inside (0, scale). The scale is stored as a raw value passed
through softplus, which keeps the optimizer unconstrained.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tape as T
from .errors import ConfigError, DomainError, ShapeError

SCALE_KEY = "raw_scale"


@dataclass
class MlpParams:
    """Layer list (weight (out, in), bias (out,)) plus the raw output scale."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    raw_scale: np.ndarray  # 0-d; scale = softplus(raw_scale)

    @property
    def scale(self) -> float:
        return float(T.softplus(self.raw_scale))

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases)) + 1

    def with_scale(self, scale: float) -> "MlpParams":
        """Copy with the output scale set to a given positive value."""
        if scale <= 0:
            raise ConfigError(f"scale must be positive, got {scale}")
        return replace(self, raw_scale=np.asarray(T.softplus_inverse(scale)))


def mlp_init(layer_sizes: list[int], seed: int) -> MlpParams:
    """Xavier-uniform weights, zero biases, output scale 1. Deterministic per seed."""
    if len(layer_sizes) < 2:
        raise ConfigError("layer_sizes needs at least an input and an output size")
    if any(int(n) <= 0 for n in layer_sizes):
        raise ConfigError(f"layer sizes must be positive, got {layer_sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, np.asarray(T.softplus_inverse(1.0)))


def mlp_forward(params: MlpParams, x):
    """Evaluate the network: tanh hidden layers, sigmoid output times scale.

    ``x`` may be a scalar or a 1-d array of scalars; the return matches. The
    output is strictly positive for any finite input.
    """
    xv = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(xv)):
        raise DomainError("network input must be finite")
    h = np.atleast_1d(xv).reshape(-1, 1)
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h = np.tanh(T.linear(h, w, b))
    out = T._sigmoid_value(T.linear(h, params.weights[-1], params.biases[-1]))
    out = out.reshape(np.shape(xv)) * T.softplus(params.raw_scale)
    return float(out) if np.ndim(xv) == 0 else out


def mlp_forward_recorded(x: "T.Var", weights: list["T.Var"], biases: list["T.Var"],
                         raw_scale: "T.Var") -> "T.Var":
    """Tape-recorded forward over a 1-d batch of scalar inputs."""
    h = x.reshape((-1, 1))
    for w, b in zip(weights[:-1], biases[:-1]):
        h = T.tanh(T.linear(h, w, b))
    out = T.sigmoid(T.linear(h, weights[-1], biases[-1]))
    return out.reshape(T.value_of(x).shape) * T.softplus(raw_scale)


# -- ADAM -----------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment estimates and step counter for one flat vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, n: int, lr: float = 1e-3, beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, eps)


def adam_step(params: np.ndarray, grads: np.ndarray,
              state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected ADAM update; inputs are left untouched."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ShapeError(
            f"parameter/gradient/state length mismatch: "
            f"{params.shape} vs {grads.shape} vs {state.m.shape}")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = replace(state, m=m, v=v, step=t)
    return new_params, new_state


# -- named parameter container ---------------------------------------------

@dataclass
class ParamStore:
    """Ordered name -> float64 tensor map with flatten/unflatten helpers."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __setitem__(self, name: str, value) -> None:
        self.tensors[name] = np.asarray(value, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return list(self.tensors.keys())

    def n_params(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def flatten(self) -> np.ndarray:
        if not self.tensors:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self.tensors.values()])

    def with_flat(self, flat: np.ndarray) -> "ParamStore":
        """New store with the same names/shapes and values from a flat vector."""
        if flat.size != self.n_params():
            raise ShapeError(f"flat vector has {flat.size} entries, "
                             f"store holds {self.n_params()}")
        out = ParamStore()
        offset = 0
        for name, v in self.tensors.items():
            out[name] = flat[offset:offset + v.size].reshape(v.shape)
            offset += v.size
        return out

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, v in self.tensors.items():
            out[name] = v.copy()
        return out

    def equals(self, other: "ParamStore") -> bool:
        return (self.names() == other.names()
                and all(np.array_equal(self[k], other[k]) for k in self.names()))
