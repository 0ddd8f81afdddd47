"""Minimal dense neural-network substrate: fully-connected MLPs with
hand-coded reverse-mode gradients, and the Adam optimizer.

Everything is float64 and deterministic: identical parameters and inputs
give bit-identical outputs, and all reductions use numpy's fixed
summation order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

Array = np.ndarray

HIDDEN_ACTIVATIONS = ("elu", "relu")
OUTPUT_ACTIVATIONS = ("identity", "logistic")


class ShapeError(ValueError):
    """Raised when array dimensions do not chain."""


def _elu(z: Array) -> Array:
    # alpha = 1; exp only evaluated on the negative part
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def _elu_prime(z: Array) -> Array:
    # one-sided limits agree at 0: exp(0) = 1
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


def _relu(z: Array) -> Array:
    return np.maximum(z, 0.0)


def _relu_prime(z: Array) -> Array:
    # derivative at exactly 0 defined as 0
    return (z > 0).astype(np.float64)


def _logistic(z: Array) -> Array:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


_ACT = {
    "elu": (_elu, _elu_prime),
    "relu": (_relu, _relu_prime),
    "identity": (lambda z: z, lambda z: np.ones_like(z)),
    "logistic": (_logistic, lambda z: _logistic(z) * (1.0 - _logistic(z))),
}


@dataclass
class Mlp:
    """Fully-connected network: weights[k] is (d_in, d_out), biases[k] is (d_out,)."""

    weights: list[Array]
    biases: list[Array]
    hidden_activation: str = "elu"
    output_activation: str = "identity"

    def __post_init__(self) -> None:
        if not self.weights:
            raise ValueError("network needs at least one layer")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ShapeError(f"layer {k}: weight {w.shape} / bias {b.shape}")
            if k > 0 and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ShapeError(
                    f"layer {k - 1} output dim {self.weights[k - 1].shape[1]} "
                    f"!= layer {k} input dim {w.shape[0]}"
                )

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "Mlp":
        return Mlp(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.hidden_activation,
            self.output_activation,
        )

    def flatten(self) -> Array:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def set_flat(self, theta: Array) -> None:
        """Overwrite parameters from a flat vector (inverse of flatten)."""
        off = 0
        for w, b in zip(self.weights, self.biases):
            w[...] = theta[off : off + w.size].reshape(w.shape)
            off += w.size
            b[...] = theta[off : off + b.size]
            off += b.size
        if off != theta.size:
            raise ShapeError(f"flat vector length {theta.size}, expected {off}")


@dataclass
class MlpGrads:
    """Parameter gradients shaped like the network they came from."""

    weights: list[Array]
    biases: list[Array]

    def flatten(self) -> Array:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def add_(self, other: "MlpGrads") -> "MlpGrads":
        for k in range(len(self.weights)):
            self.weights[k] += other.weights[k]
            self.biases[k] += other.biases[k]
        return self

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) for w in self.weights) and all(
            np.all(np.isfinite(b)) for b in self.biases
        )


def zero_grads(net: Mlp) -> MlpGrads:
    return MlpGrads(
        [np.zeros_like(w) for w in net.weights],
        [np.zeros_like(b) for b in net.biases],
    )


def init_mlp(
    layer_dims: Sequence[int],
    hidden_activation: str,
    output_activation: str,
    rng: np.random.Generator,
) -> Mlp:
    """Glorot-uniform weights, zero biases.

    layer_dims chains input -> hidden... -> output, e.g. (50, 100, 100).
    """
    if len(layer_dims) < 2:
        raise ValueError("need at least an input and an output dimension")
    weights, biases = [], []
    for d_in, d_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = np.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
        biases.append(np.zeros(d_out))
    return Mlp(weights, biases, hidden_activation, output_activation)


def _activation_for(net: Mlp, layer: int) -> str:
    return net.output_activation if layer == net.n_layers - 1 else net.hidden_activation


def mlp_forward_cached(net: Mlp, x: Array) -> tuple[Array, list[tuple[Array, Array, Array]]]:
    """Forward pass returning (output, cache); cache holds
    (layer input, preactivation, activation) per layer."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"input must be 2-D, got shape {x.shape}")
    if x.shape[1] != net.input_dim:
        raise ShapeError(f"input has {x.shape[1]} columns, network expects {net.input_dim}")
    cache = []
    a = x
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        act, _ = _ACT[_activation_for(net, k)]
        a_out = act(z)
        cache.append((a, z, a_out))
        a = a_out
    return a, cache


def _act_prime_from_cache(name: str, z: Array, a_out: Array) -> Array:
    # derivatives expressed through the stored activation where possible
    if name == "elu":
        return np.where(z > 0, 1.0, a_out + 1.0)
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "logistic":
        return a_out * (1.0 - a_out)
    return np.ones_like(z)


def mlp_forward(net: Mlp, x: Array) -> Array:
    out, _ = mlp_forward_cached(net, x)
    return out


def mlp_backward(
    net: Mlp, cache: list[tuple[Array, Array, Array]], upstream: Array
) -> tuple[MlpGrads, Array]:
    """Reverse accumulation of d(sum(upstream * output)) w.r.t. parameters and input."""
    upstream = np.asarray(upstream, dtype=np.float64)
    a_last = cache[-1][0]
    if upstream.shape != (a_last.shape[0], net.output_dim):
        raise ShapeError(
            f"upstream shape {upstream.shape}, expected {(a_last.shape[0], net.output_dim)}"
        )
    g_w: list[Array] = [None] * net.n_layers  # type: ignore[list-item]
    g_b: list[Array] = [None] * net.n_layers  # type: ignore[list-item]
    g = upstream
    for k in range(net.n_layers - 1, -1, -1):
        a_in, z, a_out = cache[k]
        g = g * _act_prime_from_cache(_activation_for(net, k), z, a_out)
        g_w[k] = a_in.T @ g
        g_b[k] = g.sum(axis=0)
        g = g @ net.weights[k].T
    return MlpGrads(g_w, g_b), g


def mlp_gradient(net: Mlp, x: Array, upstream: Array) -> tuple[MlpGrads, Array]:
    """Convenience wrapper: forward + backward in one call."""
    _, cache = mlp_forward_cached(net, x)
    return mlp_backward(net, cache, upstream)


@dataclass
class AdamState:
    """Adam moments shaped like one Mlp, plus step counter and constants."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m_w: list[Array] = field(default_factory=list)
    m_b: list[Array] = field(default_factory=list)
    v_w: list[Array] = field(default_factory=list)
    v_b: list[Array] = field(default_factory=list)


def init_adam(net: Mlp, lr: float = 1e-3) -> AdamState:
    return AdamState(
        lr=lr,
        m_w=[np.zeros_like(w) for w in net.weights],
        m_b=[np.zeros_like(b) for b in net.biases],
        v_w=[np.zeros_like(w) for w in net.weights],
        v_b=[np.zeros_like(b) for b in net.biases],
    )


def adam_step(state: AdamState, net: Mlp, grads: MlpGrads) -> tuple[Mlp, AdamState]:
    """One bias-corrected Adam update, in place on net and state.

    Rejects non-finite gradients before touching any state.
    """
    if not grads.all_finite():
        raise ValueError("adam_step: non-finite gradient, update rejected")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for k in range(net.n_layers):
        for m, v, g, p in (
            (state.m_w[k], state.v_w[k], grads.weights[k], net.weights[k]),
            (state.m_b[k], state.v_b[k], grads.biases[k], net.biases[k]),
        ):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return net, state


def mlp_to_doc(net: Mlp) -> dict:
    """Flat JSON-serializable document: dims, activation names, row-major arrays."""
    return {
        "layer_dims": [net.input_dim] + [w.shape[1] for w in net.weights],
        "hidden_activation": net.hidden_activation,
        "output_activation": net.output_activation,
        "weights": [w.ravel().tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def mlp_from_doc(doc: dict) -> Mlp:
    dims = doc["layer_dims"]
    weights = [
        np.asarray(flat, dtype=np.float64).reshape(d_in, d_out)
        for flat, d_in, d_out in zip(doc["weights"], dims[:-1], dims[1:])
    ]
    biases = [np.asarray(b, dtype=np.float64) for b in doc["biases"]]
    return Mlp(weights, biases, doc["hidden_activation"], doc["output_activation"])


def save_mlp(path: str, net: Mlp) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(mlp_to_doc(net), fh)


def load_mlp(path: str) -> Mlp:
    with open(path, "r", encoding="utf-8") as fh:
        return mlp_from_doc(json.load(fh))
