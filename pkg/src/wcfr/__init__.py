"""Counterfactual regression with propensity-based balancing weights:
weight schemes, weighted discrepancy regularizers, the two-stage learner,
a synthetic benchmark, target-population metrics, and executable
verification of the balance guarantees.
"""

from .data import Dataset, load_csv_dataset, save_csv_dataset
from .ipm import (
    MmdLinear,
    MmdRbf,
    SinkhornWasserstein,
    WeightedSample,
    exact_ot_cost,
    ipm_gradient,
    sinkhorn_wasserstein,
    weighted_mmd2,
)
from .metrics import EvalReport, ate_estimate, dr_ate, evaluate_model, pehe, pehe_nn_proxy
from .model import CfrModel, TrainConfig, export_representations, predict_ite, train_cfr
from .propensity import PropensityModel, predict_propensity, train_propensity
from .synthetic import ToyConfig, generate_toy
from .weights import WeightScheme, balancing_weight, batch_weights, tilting

__all__ = [
    "Dataset",
    "load_csv_dataset",
    "save_csv_dataset",
    "MmdLinear",
    "MmdRbf",
    "SinkhornWasserstein",
    "WeightedSample",
    "exact_ot_cost",
    "ipm_gradient",
    "sinkhorn_wasserstein",
    "weighted_mmd2",
    "EvalReport",
    "ate_estimate",
    "dr_ate",
    "evaluate_model",
    "pehe",
    "pehe_nn_proxy",
    "CfrModel",
    "TrainConfig",
    "export_representations",
    "predict_ite",
    "train_cfr",
    "PropensityModel",
    "predict_propensity",
    "train_propensity",
    "ToyConfig",
    "generate_toy",
    "WeightScheme",
    "balancing_weight",
    "batch_weights",
    "tilting",
]

__version__ = "0.1.0"
