"""Propensity-score network: a logistic-output MLP trained in the design
stage, before and independently of any outcome modelling, then frozen.

The training loss normalizes each class by its own arm size (1/N1 and
1/N0 rather than 1/N), so both arms contribute equally however
imbalanced the sample is.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import Dataset
from .nn import (
    Mlp,
    MlpGrads,
    adam_step,
    init_adam,
    init_mlp,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
    mlp_from_doc,
    mlp_to_doc,
)

Array = np.ndarray

DEFAULT_CLAMP = 1e-6


@dataclass
class PropensityModel:
    """Logistic-output score network with prediction clamping.

    Predictions are clipped to [clamp, 1-clamp] so every downstream
    balancing weight stays finite even when the network saturates.
    """

    net: Mlp
    clamp: float = DEFAULT_CLAMP
    trace: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.net.output_activation != "logistic":
            raise ValueError("propensity network must have a logistic output")
        if self.net.output_dim != 1:
            raise ValueError("propensity network must have a single output")
        if not 0.0 < self.clamp < 0.5:
            raise ValueError("clamp bound must lie in (0, 0.5)")


@dataclass
class PropensityTrainConfig:
    hidden: Sequence[int] = (10,)
    lr: float = 1e-3
    max_epochs: int = 2000
    plateau_window: int = 20
    plateau_rel_tol: float = 1e-4
    clamp: float = DEFAULT_CLAMP


def init_propensity(
    p: int, config: PropensityTrainConfig, rng: np.random.Generator
) -> PropensityModel:
    dims = [p, *config.hidden, 1]
    net = init_mlp(dims, "relu", "logistic", rng)
    return PropensityModel(net, config.clamp)


def predict_propensity(model: PropensityModel, X: Array) -> Array:
    """Predicted e(x) per row, clipped to [clamp, 1-clamp]."""
    e = mlp_forward(model.net, X)[:, 0]
    return np.clip(e, model.clamp, 1.0 - model.clamp)


def _clipped_probs(model: PropensityModel, X: Array):
    out, cache = mlp_forward_cached(model.net, X)
    e_raw = out[:, 0]
    e = np.clip(e_raw, model.clamp, 1.0 - model.clamp)
    active = (e_raw > model.clamp) & (e_raw < 1.0 - model.clamp)
    return e, active, cache


def propensity_loss(model: PropensityModel, data: Dataset) -> float:
    """Class-balanced negative log-likelihood with clamped probabilities."""
    e, _, _ = _clipped_probs(model, data.x)
    t = data.t
    n1, n0 = data.n_treated, data.n_control
    loss = -(
        np.sum(np.where(t == 1, np.log(e) / n1, 0.0))
        + np.sum(np.where(t == 0, np.log1p(-e) / n0, 0.0))
    )
    return float(loss)


def propensity_loss_grad(
    model: PropensityModel, data: Dataset
) -> tuple[float, MlpGrads]:
    """Loss plus its exact gradient; clamped units contribute zero gradient."""
    e, active, cache = _clipped_probs(model, data.x)
    t = data.t
    n1, n0 = data.n_treated, data.n_control
    loss = -(
        np.sum(np.where(t == 1, np.log(e) / n1, 0.0))
        + np.sum(np.where(t == 0, np.log1p(-e) / n0, 0.0))
    )
    # d loss / d e, then through the clamp (zero where saturated)
    dloss_de = np.where(t == 1, -1.0 / (e * n1), 1.0 / ((1.0 - e) * n0))
    dloss_de = np.where(active, dloss_de, 0.0)
    grads, _ = mlp_backward(model.net, cache, dloss_de[:, None])
    return float(loss), grads


def train_propensity(
    data: Dataset,
    config: Optional[PropensityTrainConfig] = None,
    seed: int = 0,
) -> PropensityModel:
    """Full-batch Adam until the training loss plateaus (or max_epochs).

    Deterministic given the seed; the per-epoch loss trace is attached to
    the returned model.
    """
    config = config or PropensityTrainConfig()
    rng = np.random.default_rng(seed)
    model = init_propensity(data.p, config, rng)
    opt = init_adam(model.net, config.lr)
    trace: list[float] = []
    for _ in range(config.max_epochs):
        loss, grads = propensity_loss_grad(model, data)
        if not np.isfinite(loss):
            raise FloatingPointError("propensity training diverged (non-finite loss)")
        trace.append(loss)
        adam_step(opt, model.net, grads)
        w = config.plateau_window
        if len(trace) > w:
            prev, last = trace[-w - 1], trace[-1]
            if prev - last < config.plateau_rel_tol * max(abs(prev), 1e-12):
                break
    model.trace = trace
    return model


def propensity_to_doc(model: PropensityModel) -> dict:
    doc = mlp_to_doc(model.net)
    doc["clamp"] = model.clamp
    return doc


def propensity_from_doc(doc: dict) -> PropensityModel:
    return PropensityModel(mlp_from_doc(doc), float(doc.get("clamp", DEFAULT_CLAMP)))


def save_propensity(path: str, model: PropensityModel) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(propensity_to_doc(model), fh)


def load_propensity(path: str) -> PropensityModel:
    with open(path, "r", encoding="utf-8") as fh:
        return propensity_from_doc(json.load(fh))
