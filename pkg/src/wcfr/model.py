"""Weighted counterfactual regression learner.

An encoder maps covariates to a representation; two separate heads
predict the potential-outcome means. Training minimizes the per-batch
weighted factual squared error plus alpha times a weighted discrepancy
between the reweighted per-arm representation clouds. The propensity
model is fitted beforehand and frozen, so per-unit weights are constants
throughout training and the discrepancy gradient flows only into the
encoder.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, fmt
from .ipm import IpmSpec, SinkhornWasserstein, WeightedSample, ipm_with_grad, pairwise_distances
from .nn import (
    Mlp,
    adam_step,
    init_adam,
    init_mlp,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
    mlp_from_doc,
    mlp_to_doc,
)
from .propensity import PropensityModel
from .weights import WeightScheme, batch_weights

Array = np.ndarray


@dataclass
class CfrModel:
    """Encoder plus one outcome head per arm (heads share no parameters)."""

    encoder: Mlp
    head0: Mlp
    head1: Mlp

    def __post_init__(self) -> None:
        rep = self.encoder.output_dim
        for name, head in (("head0", self.head0), ("head1", self.head1)):
            if head.input_dim != rep:
                raise ValueError(f"{name} input dim {head.input_dim} != "
                                 f"encoder output dim {rep}")
            if head.output_dim != 1:
                raise ValueError(f"{name} must produce a single output")

    @property
    def rep_dim(self) -> int:
        return self.encoder.output_dim

    def copy(self) -> "CfrModel":
        return CfrModel(self.encoder.copy(), self.head0.copy(), self.head1.copy())


@dataclass
class TrainConfig:
    """Learner hyperparameters; defaults follow the standard toy setting."""

    alpha: float = 0.0
    ipm: IpmSpec = field(default_factory=SinkhornWasserstein)
    scheme: WeightScheme = field(default_factory=lambda: WeightScheme("uniform"))
    encoder_hidden: Sequence[int] = (100,)
    rep_dim: int = 100
    head_hidden: Sequence[int] = (100,)
    batch_size: int = 200
    lr: float = 1e-3
    max_epochs: int = 600
    patience: int = 100
    snapshot: str = "best_val"  # or "final": fixed budget, keep the last model
    seed: int = 0

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.batch_size < 2:
            raise ValueError("batch size must allow both arms")
        if self.snapshot not in ("best_val", "final"):
            raise ValueError("snapshot must be 'best_val' or 'final'")


def init_cfr(p: int, config: TrainConfig, rng: np.random.Generator) -> CfrModel:
    enc = init_mlp([p, *config.encoder_hidden, config.rep_dim], "elu", "identity", rng)
    h0 = init_mlp([config.rep_dim, *config.head_hidden, 1], "elu", "identity", rng)
    h1 = init_mlp([config.rep_dim, *config.head_hidden, 1], "elu", "identity", rng)
    return CfrModel(enc, h0, h1)


@dataclass
class Batch:
    """Index sets drawn without replacement within each arm."""

    treated: Array
    control: Array

    @property
    def n(self) -> int:
        return self.treated.size + self.control.size

    def indices(self) -> Array:
        return np.concatenate([self.treated, self.control])


def sample_batch(data: Dataset, n: int, rng: np.random.Generator) -> Batch:
    """Proportion-preserving batch: n1/n matches N1/N up to rounding,
    clipped so both arms are represented."""
    if n > data.n:
        raise ValueError(f"batch size {n} exceeds dataset size {data.n}")
    n1 = int(np.floor(n * data.n_treated / data.n + 0.5))
    n1 = min(max(n1, 1), n - 1)
    n0 = n - n1
    treated = rng.choice(data.arm_indices(1), size=n1, replace=False)
    control = rng.choice(data.arm_indices(0), size=n0, replace=False)
    return Batch(treated, control)


def _head_for(model: CfrModel, t: int) -> Mlp:
    return model.head1 if t == 1 else model.head0


def predict_outcome(model: CfrModel, x: Array, t: int) -> Array:
    rep = mlp_forward(model.encoder, x)
    return mlp_forward(_head_for(model, t), rep)[:, 0]


def predict_ite(model: CfrModel, x: Array) -> Array:
    """h(Phi(x), 1) - h(Phi(x), 0) per row."""
    rep = mlp_forward(model.encoder, x)
    return mlp_forward(model.head1, rep)[:, 0] - mlp_forward(model.head0, rep)[:, 0]


def factual_loss(
    model: CfrModel, data: Dataset, batch: Batch, weights: Array
) -> float:
    """(1/n) sum over the batch of w_i (y_i - h(Phi(x_i), t_i))^2."""
    idx = batch.indices()
    if weights.shape != (data.n,):
        raise ValueError("weights must cover the full dataset")
    rep = mlp_forward(model.encoder, data.x[idx])
    t = data.t[idx]
    pred = np.empty(idx.size)
    for arm in (0, 1):
        m = t == arm
        if m.any():
            pred[m] = mlp_forward(_head_for(model, arm), rep[m])[:, 0]
    resid = data.y[idx] - pred
    return float(np.sum(weights[idx] * resid * resid) / batch.n)


@dataclass
class ObjectiveResult:
    objective: float
    factual: float
    ipm: Optional[float]  # None when the discrepancy was not evaluated
    ipm_skipped: bool
    rep_diameter: float
    grads_encoder: object
    grads_head0: object
    grads_head1: object


def objective_with_grad(
    model: CfrModel,
    data: Dataset,
    batch: Batch,
    weights: Array,
    alpha: float,
    ipm_spec: IpmSpec,
    monitor_diameter: bool = True,
) -> ObjectiveResult:
    """Batch objective and exact gradients for encoder and both heads.

    The discrepancy term is skipped (contributing zero, flagged) when an
    arm of the batch has no weight mass, which truncated weights can
    produce. monitor_diameter=False skips the pairwise-distance diagnostic.
    """
    n = batch.n
    idx_t, idx_c = batch.treated, batch.control
    x_t, x_c = data.x[idx_t], data.x[idx_c]
    w_t, w_c = weights[idx_t], weights[idx_c]
    y_t, y_c = data.y[idx_t], data.y[idx_c]

    rep_t, cache_t = mlp_forward_cached(model.encoder, x_t)
    rep_c, cache_c = mlp_forward_cached(model.encoder, x_c)

    pred_t, hcache_t = mlp_forward_cached(model.head1, rep_t)
    pred_c, hcache_c = mlp_forward_cached(model.head0, rep_c)
    resid_t = pred_t[:, 0] - y_t
    resid_c = pred_c[:, 0] - y_c
    lf = float((np.sum(w_t * resid_t**2) + np.sum(w_c * resid_c**2)) / n)

    # d L_F / d prediction
    up_t = (2.0 / n) * (w_t * resid_t)[:, None]
    up_c = (2.0 / n) * (w_c * resid_c)[:, None]
    g_head1, d_rep_t = mlp_backward(model.head1, hcache_t, up_t)
    g_head0, d_rep_c = mlp_backward(model.head0, hcache_c, up_c)

    rep_diameter = 0.0
    if monitor_diameter and n > 1:
        all_reps = np.vstack([rep_t, rep_c])
        rep_diameter = float(pairwise_distances(all_reps, all_reps).max())

    ipm_val: Optional[float] = None
    skipped = False
    if alpha > 0.0:
        if w_t.sum() > 0.0 and w_c.sum() > 0.0:
            val, g_t, g_c = ipm_with_grad(
                ipm_spec,
                WeightedSample(rep_t, w_t),
                WeightedSample(rep_c, w_c),
            )
            ipm_val = val
            d_rep_t = d_rep_t + alpha * g_t
            d_rep_c = d_rep_c + alpha * g_c
        else:
            skipped = True

    g_enc_t, _ = mlp_backward(model.encoder, cache_t, d_rep_t)
    g_enc_c, _ = mlp_backward(model.encoder, cache_c, d_rep_c)
    g_enc = g_enc_t.add_(g_enc_c)

    obj = lf + (alpha * ipm_val if ipm_val is not None else 0.0)
    return ObjectiveResult(obj, lf, ipm_val, skipped, rep_diameter,
                           g_enc, g_head0, g_head1)


def objective(
    model: CfrModel,
    data: Dataset,
    batch: Batch,
    config: TrainConfig,
    propensity: PropensityModel,
) -> float:
    """Scalar batch objective using weights from the frozen propensity."""
    w = batch_weights(config.scheme, propensity, data.x, data.t)
    res = objective_with_grad(model, data, batch, w, config.alpha, config.ipm)
    return res.objective


def weighted_validation_loss(model: CfrModel, data: Dataset, weights: Array) -> float:
    """Weighted factual MSE over a full split, (1/N) normalization."""
    rep = mlp_forward(model.encoder, data.x)
    pred = np.empty(data.n)
    for arm in (0, 1):
        m = data.t == arm
        if m.any():
            pred[m] = mlp_forward(_head_for(model, arm), rep[m])[:, 0]
    resid = data.y - pred
    return float(np.sum(weights * resid * resid) / data.n)


@dataclass
class TrainResult:
    model: CfrModel
    trace: list
    best_epoch: int
    best_val_loss: float
    aborted: bool = False  # non-finite objective forced an early return


def train_cfr(
    train: Dataset,
    val: Dataset,
    config: TrainConfig,
    propensity: PropensityModel,
) -> TrainResult:
    """Adam training with early stopping on the weighted validation loss.

    Deterministic given config.seed. With snapshot="best_val" (default)
    returns the parameter snapshot with the best validation loss, stopping
    after `patience` epochs without improvement; with snapshot="final" the
    full epoch budget runs and the last model is returned (validation is
    still traced). The trace records per-epoch train objective, validation
    loss, mean discrepancy value (None when never evaluated) and a
    per-epoch sample of the representation diameter.
    """
    if config.batch_size > train.n:
        raise ValueError("batch size exceeds the training split")
    rng = np.random.default_rng(config.seed)
    model = init_cfr(train.p, config, rng)
    w_train = batch_weights(config.scheme, propensity, train.x, train.t)
    w_val = batch_weights(config.scheme, propensity, val.x, val.t)

    opts = {
        "encoder": init_adam(model.encoder, config.lr),
        "head0": init_adam(model.head0, config.lr),
        "head1": init_adam(model.head1, config.lr),
    }
    batches_per_epoch = int(np.ceil(train.n / config.batch_size))
    best = model.copy()
    best_val = weighted_validation_loss(model, val, w_val)
    best_epoch = 0
    since_best = 0
    trace: list[dict] = []
    aborted = False

    for epoch in range(1, config.max_epochs + 1):
        epoch_obj = 0.0
        epoch_ipm: list[float] = []
        epoch_diam = 0.0
        skipped = 0
        bad = False
        for b in range(batches_per_epoch):
            batch = sample_batch(train, config.batch_size, rng)
            res = objective_with_grad(
                model, train, batch, w_train, config.alpha, config.ipm,
                monitor_diameter=(b == 0),  # one diameter sample per epoch
            )
            if not np.isfinite(res.objective):
                bad = True
                break
            adam_step(opts["encoder"], model.encoder, res.grads_encoder)
            adam_step(opts["head0"], model.head0, res.grads_head0)
            adam_step(opts["head1"], model.head1, res.grads_head1)
            epoch_obj += res.objective
            if res.ipm is not None:
                epoch_ipm.append(res.ipm)
            skipped += res.ipm_skipped
            epoch_diam = max(epoch_diam, res.rep_diameter)
        if bad:
            aborted = True
            if config.snapshot == "final":
                best = model  # parameters before the non-finite batch
                best_epoch = len(trace)
            break
        val_loss = weighted_validation_loss(model, val, w_val)
        trace.append(
            {
                "epoch": epoch,
                "train_objective": epoch_obj / batches_per_epoch,
                "val_loss": val_loss,
                "ipm": (float(np.mean(epoch_ipm)) if epoch_ipm else None),
                "ipm_skipped_batches": skipped,
                "rep_diameter": epoch_diam,
            }
        )
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            since_best = 0
            if config.snapshot == "best_val":
                best = model.copy()
        else:
            since_best += 1
            if config.snapshot == "best_val" and since_best >= config.patience:
                break
    if config.snapshot == "final" and not aborted:
        best = model
        best_epoch = len(trace)
    return TrainResult(best, trace, best_epoch, best_val, aborted)


def export_representations(
    model: CfrModel,
    propensity: PropensityModel,
    scheme: WeightScheme,
    data: Dataset,
) -> tuple[list[str], Array]:
    """Per-unit table (r_1..r_p', w, t, y) for downstream learners."""
    rep = mlp_forward(model.encoder, data.x)
    w = batch_weights(scheme, propensity, data.x, data.t)
    header = [f"r{j + 1}" for j in range(rep.shape[1])] + ["w", "t", "y"]
    table = np.column_stack([rep, w, data.t.astype(np.float64), data.y])
    return header, table


def write_representations(path: str, header: list[str], table: Array) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in table:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def cfr_to_doc(model: CfrModel) -> dict:
    return {
        "encoder": mlp_to_doc(model.encoder),
        "head0": mlp_to_doc(model.head0),
        "head1": mlp_to_doc(model.head1),
    }


def cfr_from_doc(doc: dict) -> CfrModel:
    return CfrModel(
        mlp_from_doc(doc["encoder"]),
        mlp_from_doc(doc["head0"]),
        mlp_from_doc(doc["head1"]),
    )


def save_cfr(path: str, model: CfrModel) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfr_to_doc(model), fh)


def load_cfr(path: str) -> CfrModel:
    with open(path, "r", encoding="utf-8") as fh:
        return cfr_from_doc(json.load(fh))
