"""Parameterized synthetic benchmark: equicorrelated Gaussian covariates,
logistic treatment assignment with a tunable imbalance magnitude, and
linear potential-outcome surfaces whose support overlap with the
treatment coefficients controls the level of confounding.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .data import Dataset

Array = np.ndarray


@dataclass(frozen=True)
class ToyConfig:
    """Generator parameters; defaults are the benchmark's standard setting."""

    n_train: int = 525
    n_val: int = 225
    n_test: int = 250
    p: int = 50
    p_star: int = 20
    sigma_x2: float = 0.05
    sigma_y: float = 1.0
    rho: float = 0.3
    beta0_scale: float = 1.0
    beta_tau_scale: float = 0.3
    gamma_scale: float = 0.0
    omega: int = 20
    theta: float = 3.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.omega <= self.p_star:
            raise ValueError("omega must lie in [0, p_star]")
        if self.p_star > self.p:
            raise ValueError("p_star cannot exceed p")
        if 2 * self.p_star - self.omega > self.p:
            raise ValueError("supports of size p_star with the requested overlap "
                             "do not fit into p dimensions")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if self.gamma_scale < 0:
            raise ValueError("gamma_scale must be nonnegative")


@dataclass
class Supports:
    outcome_idx: Array   # support of both outcome coefficient vectors
    treatment_idx: Array  # support of the treatment coefficient vector
    beta0: Array
    beta_tau: Array
    gamma: Array


def build_supports(config: ToyConfig) -> Supports:
    """Deterministic support layout with the exact requested overlap.

    Outcome support occupies [0, p_star); treatment support is shifted to
    [p_star - omega, 2*p_star - omega) so the intersection has size omega.
    """
    ps, om, p = config.p_star, config.omega, config.p
    b_idx = np.arange(ps)
    g_idx = np.arange(ps - om, 2 * ps - om)
    beta0 = np.zeros(p)
    beta0[b_idx] = config.beta0_scale
    beta_tau = np.zeros(p)
    beta_tau[b_idx] = config.beta_tau_scale
    gamma = np.zeros(p)
    gamma[g_idx] = config.gamma_scale
    return Supports(b_idx, g_idx, beta0, beta_tau, gamma)


def equicorr_mvn_sample(
    p: int, sigma_x2: float, rho: float, n: int, rng: np.random.Generator
) -> Array:
    """Draw n rows from MVN(0, sigma_x2 * [(1-rho) I + rho 11^T]).

    Uses the closed-form decomposition x = sigma_x * (sqrt(1-rho) z +
    sqrt(rho) z0 * 1), which is exact for the equicorrelation structure.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    z = rng.standard_normal((n, p))
    z0 = rng.standard_normal((n, 1))
    return np.sqrt(sigma_x2) * (np.sqrt(1.0 - rho) * z + np.sqrt(rho) * z0)


def _sigmoid(z: Array) -> Array:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class ToyData:
    train: Dataset
    val: Dataset
    test: Dataset
    propensity: dict  # true e(x) per split
    config: ToyConfig
    supports: Supports

    def manifest(self) -> dict:
        return {
            "generator": "equicorrelated-gaussian-linear-outcomes",
            "rng": "numpy.random.default_rng (PCG64)",
            "config": asdict(self.config),
            "outcome_support": self.supports.outcome_idx.tolist(),
            "treatment_support": self.supports.treatment_idx.tolist(),
            "noise_shared_across_potential_outcomes": True,
        }


def generate_toy(config: ToyConfig) -> ToyData:
    """Draw the train/val/test triple with ground truth retained.

    The additive noise is drawn once per unit and shared between both
    potential outcomes; tau(x) = x^T beta_tau + theta is therefore exact.
    """
    rng = np.random.default_rng(config.seed)
    sup = build_supports(config)
    n_total = config.n_train + config.n_val + config.n_test
    x = equicorr_mvn_sample(config.p, config.sigma_x2, config.rho, n_total, rng)
    e_true = _sigmoid(x @ sup.gamma)
    t = (rng.random(n_total) < e_true).astype(np.int64)
    eps = config.sigma_y * rng.standard_normal(n_total)
    mu0 = x @ sup.beta0
    mu1 = mu0 + x @ sup.beta_tau + config.theta
    y0 = mu0 + eps
    y1 = mu1 + eps
    y = np.where(t == 1, y1, y0)
    ycf = np.where(t == 1, y0, y1)

    bounds = (0, config.n_train, config.n_train + config.n_val, n_total)
    splits = []
    props = {}
    for name, lo, hi in zip(("train", "val", "test"), bounds[:-1], bounds[1:]):
        sl = slice(lo, hi)
        splits.append(Dataset(x[sl], t[sl], y[sl], mu0[sl], mu1[sl], ycf[sl]))
        props[name] = e_true[sl]
    return ToyData(splits[0], splits[1], splits[2], props, config, sup)


def save_toy(out_dir: str, toy: ToyData) -> dict:
    """Write the three split CSVs and a manifest; returns the file map."""
    from .data import save_csv_dataset

    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for name in ("train", "val", "test"):
        path = os.path.join(out_dir, f"{name}.csv")
        save_csv_dataset(path, getattr(toy, name))
        paths[name] = path
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(toy.manifest(), fh, indent=2)
    paths["manifest"] = manifest_path
    return paths
