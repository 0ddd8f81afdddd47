"""Target-population evaluation: tilted PEHE and ATE metrics, the
doubly-robust ATE correction, and a counterfactual-free nearest-neighbor
PEHE proxy for model selection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset
from .model import CfrModel, predict_ite, predict_outcome
from .propensity import PropensityModel, predict_propensity
from .weights import WeightScheme, balancing_weight, tilting

Array = np.ndarray


class EmptyTargetPopulation(ValueError):
    """All tilting values are zero: the target population has no mass."""


def _tilt(scheme: Optional[WeightScheme], e: Optional[Array], n: int) -> Array:
    """Tilting values f(x_i); scheme None (or uniform/ipw) means f = 1."""
    if scheme is None or scheme.kind in ("uniform", "ipw"):
        return np.ones(n)
    if e is None:
        raise ValueError(f"scheme {scheme.kind!r} needs propensity values")
    return np.asarray(tilting(scheme, e))


def _tilted_mean(values: Array, f: Array) -> float:
    total = f.sum()
    if total <= 0.0:
        raise EmptyTargetPopulation("all tilting values are zero")
    return float(np.sum(f * values) / total)


def pehe(
    tau_true: Array,
    tau_hat: Array,
    scheme: Optional[WeightScheme] = None,
    e: Optional[Array] = None,
) -> float:
    """Self-normalized tilted mean squared ITE error (raw, not square-rooted)."""
    tau_true = np.asarray(tau_true, dtype=np.float64)
    tau_hat = np.asarray(tau_hat, dtype=np.float64)
    if tau_true.shape != tau_hat.shape:
        raise ValueError("tau vectors must align")
    f = _tilt(scheme, e, tau_true.size)
    return _tilted_mean((tau_true - tau_hat) ** 2, f)


def ate_estimate(
    tau_hat: Array,
    scheme: Optional[WeightScheme] = None,
    e: Optional[Array] = None,
) -> float:
    """Tilted-population mean of predicted ITEs."""
    tau_hat = np.asarray(tau_hat, dtype=np.float64)
    f = _tilt(scheme, e, tau_hat.size)
    return _tilted_mean(tau_hat, f)


def ate_error(
    tau_true: Array,
    tau_hat: Array,
    scheme: Optional[WeightScheme] = None,
    e: Optional[Array] = None,
) -> float:
    """|tilted mean of true ITEs - tilted mean of predicted ITEs|."""
    return abs(
        ate_estimate(np.asarray(tau_true), scheme, e) - ate_estimate(tau_hat, scheme, e)
    )


def dr_ate(
    model: CfrModel,
    propensity: PropensityModel,
    scheme: WeightScheme,
    train: Dataset,
    tau_hat_eval: Array,
    e_eval: Optional[Array] = None,
) -> float:
    """Doubly-robust ATE: vanilla tilted estimate minus per-arm weighted
    residual biases computed on the training split only."""
    e_train = predict_propensity(propensity, train.x)
    bias = {}
    for arm in (0, 1):
        idx = train.arm_indices(arm)
        w = balancing_weight(scheme, e_train[idx], np.full(idx.size, arm))
        total = w.sum()
        if total <= 0.0:
            raise EmptyTargetPopulation(f"arm {arm} carries no weight mass")
        pred = predict_outcome(model, train.x[idx], arm)
        bias[arm] = float(np.sum(w * (pred - train.y[idx])) / total)
    vanilla = ate_estimate(tau_hat_eval, scheme, e_eval)
    return vanilla - bias[1] + bias[0]


def pehe_nn_proxy(model: CfrModel, data: Dataset) -> float:
    """Counterfactual-free PEHE proxy: each unit's ITE is imputed from its
    nearest opposite-arm neighbor's factual outcome (ties broken by lowest
    index). Used for model selection only."""
    if data.n_treated < 1 or data.n_control < 1:
        raise ValueError("proxy needs both arms")
    tau_hat = predict_ite(model, data.x)
    arm_idx = {t: data.arm_indices(t) for t in (0, 1)}
    proxy = np.empty(data.n)
    for i in range(data.n):
        opp = arm_idx[1 - data.t[i]]
        d = np.linalg.norm(data.x[opp] - data.x[i], axis=1)
        j = opp[int(np.argmin(d))]  # argmin returns the first (lowest-index) tie
        proxy[i] = (1 - 2 * data.t[i]) * (data.y[j] - data.y[i])
    return float(np.mean((proxy - tau_hat) ** 2))


EVAL_TILTS = ("ipw", "truncipw", "mw", "ow")


@dataclass
class EvalReport:
    """Per-(model, dataset) evaluation record; None marks unavailable fields
    (no ground truth, or no propensity of the requested kind)."""

    scheme: str
    n: int
    n_treated: int
    pehe_p: Optional[float] = None
    sqrt_pehe_p: Optional[float] = None
    pehe_g_true: dict = field(default_factory=dict)
    pehe_g_model: dict = field(default_factory=dict)
    ate_p_hat: Optional[float] = None
    ate_error_p: Optional[float] = None
    ate_g_hat: Optional[float] = None
    ate_error_g: Optional[float] = None
    ate_dr: Optional[float] = None
    ate_error_dr: Optional[float] = None
    dr_shift: Optional[float] = None
    pehe_nn: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "n": self.n,
            "n_treated": self.n_treated,
            "pehe_p": self.pehe_p,
            "sqrt_pehe_p": self.sqrt_pehe_p,
            "pehe_g_true": self.pehe_g_true,
            "pehe_g_model": self.pehe_g_model,
            "ate_p_hat": self.ate_p_hat,
            "ate_error_p": self.ate_error_p,
            "ate_g_hat": self.ate_g_hat,
            "ate_error_g": self.ate_error_g,
            "ate_dr": self.ate_dr,
            "ate_error_dr": self.ate_error_dr,
            "dr_shift": self.dr_shift,
            "pehe_nn": self.pehe_nn,
        }


def evaluate_model(
    model: CfrModel,
    propensity: PropensityModel,
    scheme: WeightScheme,
    eval_data: Dataset,
    train_data: Dataset,
    e_true_eval: Optional[Array] = None,
) -> EvalReport:
    """Full evaluation of a trained model on one split.

    Tilted metrics use the true propensity when available (synthetic data)
    and the fitted model otherwise; both variants are reported when both
    exist. The doubly-robust correction always uses model weights on the
    training split, matching how the weights enter training.
    """
    report = EvalReport(scheme.kind, eval_data.n, eval_data.n_treated)
    tau_hat = predict_ite(model, eval_data.x)
    e_model = predict_propensity(propensity, eval_data.x)
    if e_true_eval is not None:
        # saturated assignment can round the true propensity to exactly 0/1
        # in float64; clip to the same clamp the model side uses
        e_true_eval = np.clip(e_true_eval, propensity.clamp, 1.0 - propensity.clamp)
    e_for_tilts = e_true_eval if e_true_eval is not None else e_model

    report.pehe_nn = pehe_nn_proxy(model, eval_data)
    report.ate_p_hat = ate_estimate(tau_hat)

    if eval_data.has_truth:
        tau_true = eval_data.tau_true()
        report.pehe_p = pehe(tau_true, tau_hat)
        report.sqrt_pehe_p = float(np.sqrt(report.pehe_p))
        report.ate_error_p = ate_error(tau_true, tau_hat)
        for kind in EVAL_TILTS:
            tilt_scheme = WeightScheme(kind)
            if e_true_eval is not None:
                report.pehe_g_true[kind] = pehe(tau_true, tau_hat, tilt_scheme, e_true_eval)
            report.pehe_g_model[kind] = pehe(tau_true, tau_hat, tilt_scheme, e_model)
        try:
            report.ate_g_hat = ate_estimate(tau_hat, scheme, e_for_tilts)
            report.ate_error_g = ate_error(tau_true, tau_hat, scheme, e_for_tilts)
            dr = dr_ate(model, propensity, scheme, train_data, tau_hat, e_for_tilts)
            report.ate_dr = dr
            report.dr_shift = abs(dr - report.ate_g_hat)
            ate_g_true = ate_estimate(tau_true, scheme, e_for_tilts)
            report.ate_error_dr = abs(ate_g_true - dr)
        except EmptyTargetPopulation:
            pass  # truncated tilt can empty the target population
    else:
        try:
            report.ate_g_hat = ate_estimate(tau_hat, scheme, e_for_tilts)
            dr = dr_ate(model, propensity, scheme, train_data, tau_hat, e_for_tilts)
            report.ate_dr = dr
            report.dr_shift = abs(dr - report.ate_g_hat)
        except EmptyTargetPopulation:
            pass
    return report
