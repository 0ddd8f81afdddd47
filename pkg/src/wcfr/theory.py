"""Executable verification of the balance guarantees on finite discrete
covariate spaces, where every density, divergence, and bound constant is
an exact finite sum.

Each suite draws randomized instances (support probabilities, true and
perturbed model propensities), evaluates both sides of a guarantee
exactly, and reports the worst slack observed. A violation beyond
numerical tolerance indicates an implementation bug, since the underlying
statements are theorems.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
import numpy as np

from .ipm import MmdLinear, MmdRbf, WeightedSample, exact_mmd2, exact_ot_cost, pairwise_distances
from .weights import WeightScheme, balancing_weight, tilting

Array = np.ndarray

TOL = 1e-12

PROPENSITY_SCHEMES = ("ipw", "truncipw", "mw", "ow")


@dataclass
class DiscreteInstance:
    """Finite-support covariate distribution with true and model propensities."""

    probs: Array
    e_true: Array
    e_model: Array
    scheme: WeightScheme

    def __post_init__(self) -> None:
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.e_true = np.asarray(self.e_true, dtype=np.float64)
        self.e_model = np.asarray(self.e_model, dtype=np.float64)
        k = self.probs.size
        if self.e_true.shape != (k,) or self.e_model.shape != (k,):
            raise ValueError("propensity vectors must align with the support")
        if not np.isclose(self.probs.sum(), 1.0, atol=1e-9) or np.any(self.probs <= 0):
            raise ValueError("support probabilities must be positive and sum to 1")
        for e in (self.e_true, self.e_model):
            if np.any(e <= 0.0) or np.any(e >= 1.0):
                raise ValueError("propensities must be strictly interior")

    @property
    def k(self) -> int:
        return self.probs.size

    def to_dict(self) -> dict:
        return {
            "probs": self.probs.tolist(),
            "e_true": self.e_true.tolist(),
            "e_model": self.e_model.tolist(),
            "scheme": self.scheme.kind,
            "xi": self.scheme.xi,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DiscreteInstance":
        return cls(
            np.asarray(doc["probs"]),
            np.asarray(doc["e_true"]),
            np.asarray(doc["e_model"]),
            WeightScheme(doc["scheme"], doc.get("xi", 0.1)),
        )


def reweighted_conditionals(
    inst: DiscreteInstance, use_model: bool
) -> tuple[Array, Array]:
    """g(x|T=1) and g(x|T=0): per-arm conditionals reweighted toward the
    target population, normalized exactly.

    The arm conditionals always come from the true propensity (it defines
    the data distribution); use_model switches which propensity enters the
    weights.
    """
    p, e = inst.probs, inst.e_true
    p1 = p * e
    p1 /= p1.sum()
    p0 = p * (1.0 - e)
    p0 /= p0.sum()
    e_w = inst.e_model if use_model else inst.e_true
    w1 = np.asarray(balancing_weight(inst.scheme, e_w, np.ones(inst.k, dtype=int)))
    w0 = np.asarray(balancing_weight(inst.scheme, e_w, np.zeros(inst.k, dtype=int)))
    g1 = w1 * p1
    g0 = w0 * p0
    if g1.sum() <= 0.0 or g0.sum() <= 0.0:
        raise ValueError("reweighted arm has zero normalizer")
    return g1 / g1.sum(), g0 / g0.sum()


def tvd(p: Array, q: Array) -> float:
    return 0.5 * float(np.abs(p - q).sum())


def kl_divergence(p: Array, q: Array) -> float:
    if np.any((p > 0) & (q <= 0)):
        return float("inf")
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def gamma_of(inst: DiscreteInstance) -> float:
    """Smallest Gamma bounding the model/true propensity odds ratio."""
    odds = (inst.e_true * (1.0 - inst.e_model)) / (
        inst.e_model * (1.0 - inst.e_true)
    )
    return float(max(odds.max(), (1.0 / odds).max(), 1.0))


def kl_and_tvd_check(inst: DiscreteInstance) -> dict:
    """Exact divergence bounds: KL <= 2 log(Gamma), TVD <= sqrt(log(Gamma))."""
    f_model = np.asarray(tilting(inst.scheme, inst.e_model))
    if np.any(f_model <= 0.0):
        raise ValueError("tilting must be strictly positive on the support")
    g1, g0 = reweighted_conditionals(inst, use_model=True)
    gamma = gamma_of(inst)
    kl = kl_divergence(g1, g0)
    tv = tvd(g1, g0)
    kl_bound = float(2.0 * np.log(gamma))
    tvd_bound = float(np.sqrt(np.log(gamma)))
    return {
        "kl": kl,
        "kl_bound": kl_bound,
        "kl_slack": kl_bound - kl,
        "tvd": tv,
        "tvd_bound": tvd_bound,
        "tvd_slack": tvd_bound - tv,
        "gamma": gamma,
        "pass": bool((kl <= kl_bound + TOL) and (tv <= tvd_bound + TOL)),
    }


def ipm_bound_check(
    inst: DiscreteInstance, embedding: Array, rbf_sigma: float = 0.1
) -> dict:
    """Exact Wasserstein and MMD between the reweighted arms against the
    diameter/kernel bounds implied by the propensity odds-ratio gap."""
    embedding = np.asarray(embedding, dtype=np.float64)
    if embedding.shape[0] != inst.k:
        raise ValueError("embedding must supply one point per support atom")
    g1, g0 = reweighted_conditionals(inst, use_model=True)
    gamma = gamma_of(inst)
    root_log_gamma = float(np.sqrt(np.log(gamma)))

    wass = exact_ot_cost(WeightedSample(embedding, g1), WeightedSample(embedding, g0))
    diam = float(pairwise_distances(embedding, embedding).max())
    wass_bound = float(diam * root_log_gamma)

    mmd2_lin = exact_mmd2(MmdLinear(), embedding, g1, embedding, g0)
    mmd_lin = float(np.sqrt(mmd2_lin))
    c_lin = float(np.max(np.sum(embedding * embedding, axis=1)))
    lin_bound = float(2.0 * np.sqrt(c_lin) * root_log_gamma)

    mmd2_rbf = exact_mmd2(MmdRbf(rbf_sigma), embedding, g1, embedding, g0)
    mmd_rbf = float(np.sqrt(mmd2_rbf))
    rbf_bound = 2.0 * root_log_gamma  # sup k(r,r) = 1 for the RBF kernel

    # the MMD inequalities are checked in squared form: sqrt amplifies the
    # ~1e-16 floating-point noise of a mathematically-zero MMD^2 to ~1e-8
    return {
        "gamma": gamma,
        "wass": wass,
        "wass_bound": wass_bound,
        "wass_slack": wass_bound - wass,
        "mmd_lin": mmd_lin,
        "mmd_lin_bound": lin_bound,
        "mmd_lin_slack": lin_bound - mmd_lin,
        "mmd_rbf": mmd_rbf,
        "mmd_rbf_bound": rbf_bound,
        "mmd_rbf_slack": rbf_bound - mmd_rbf,
        "pass": bool(
            wass <= wass_bound + TOL
            and mmd2_lin <= lin_bound**2 + TOL * max(1.0, c_lin)
            and mmd2_rbf <= rbf_bound**2 + TOL
        ),
    }


def pehe_sandwich_constants(inst: DiscreteInstance, sq_errors: Array) -> dict:
    """Exact sandwich between observed- and tilted-population PEHE.

    A_f = Z_f / sup f and B_f = Z_f / inf f, with everything evaluated at
    the true propensity on the finite support.
    """
    sq_errors = np.asarray(sq_errors, dtype=np.float64)
    f = np.asarray(tilting(inst.scheme, inst.e_true))
    if f.min() <= 0.0:
        raise ValueError("sandwich constants need inf f > 0 on the support")
    z_f = float(np.sum(f * inst.probs))
    a_f = z_f / float(f.max())
    b_f = z_f / float(f.min())
    pehe_p = float(np.sum(inst.probs * sq_errors))
    g = f * inst.probs / z_f
    pehe_g = float(np.sum(g * sq_errors))
    lower = a_f * pehe_g
    upper = b_f * pehe_g
    scale = max(abs(pehe_p), abs(upper), 1.0)
    ok = bool((lower <= pehe_p + TOL * scale) and (pehe_p <= upper + TOL * scale))
    return {
        "a_f": a_f,
        "b_f": b_f,
        "pehe_p": pehe_p,
        "pehe_g": pehe_g,
        "lower": lower,
        "upper": upper,
        "pass": ok,
    }


# ---------------------------------------------------------------------------
# Randomized instances and suites
# ---------------------------------------------------------------------------


def random_instance(
    rng: np.random.Generator,
    scheme: WeightScheme,
    k_max: int = 16,
    perturbation: float = 1.0,
) -> DiscreteInstance:
    """Random support with symmetric-Dirichlet probabilities; the model
    propensity is a clamped logit-space perturbation of the true one.

    For the truncated scheme, propensities are kept inside the truncation
    band so the tilting stays strictly positive.
    """
    k = int(rng.integers(2, k_max + 1))
    probs = rng.dirichlet(np.ones(k))
    if scheme.kind == "truncipw":
        lo, hi = scheme.xi + 0.05, 1.0 - scheme.xi - 0.05
    else:
        lo, hi = 0.05, 0.95
    e_true = rng.uniform(lo, hi, k)
    logit = np.log(e_true / (1.0 - e_true))
    e_model = 1.0 / (1.0 + np.exp(-(logit + perturbation * rng.normal(0.0, 1.0, k))))
    e_model = np.clip(e_model, lo, hi)
    return DiscreteInstance(probs, e_true, e_model, scheme)


def run_balance_suite(n_instances: int = 1000, seed: int = 0) -> dict:
    """Reweighting with the true propensity balances the arms exactly."""
    rng = np.random.default_rng(seed)
    max_tvd = 0.0
    worst = None
    count = 0
    for _ in range(n_instances):
        for kind in PROPENSITY_SCHEMES:
            inst = random_instance(rng, WeightScheme(kind))
            g1, g0 = reweighted_conditionals(inst, use_model=False)
            t = tvd(g1, g0)
            count += 1
            if t > max_tvd:
                max_tvd, worst = t, inst
    return {
        "suite": "balance",
        "instances": count,
        "max_tvd": max_tvd,
        "tolerance": TOL,
        "pass": bool(max_tvd < TOL),
        "worst_instance": worst.to_dict() if worst is not None and max_tvd >= TOL else None,
    }


def run_divergence_suite(n_instances: int = 1000, seed: int = 1) -> dict:
    """KL and TVD bounds over randomized instances, plus tightness at
    Gamma = 1 (model propensity equal to the truth)."""
    rng = np.random.default_rng(seed)
    min_kl_slack = np.inf
    min_tvd_slack = np.inf
    failures = 0
    worst = None
    count = 0
    for _ in range(n_instances):
        kind = PROPENSITY_SCHEMES[int(rng.integers(len(PROPENSITY_SCHEMES)))]
        inst = random_instance(rng, WeightScheme(kind), perturbation=rng.uniform(0.0, 2.0))
        rep = kl_and_tvd_check(inst)
        count += 1
        if rep["kl_slack"] < min_kl_slack:
            min_kl_slack = rep["kl_slack"]
        if rep["tvd_slack"] < min_tvd_slack:
            min_tvd_slack = rep["tvd_slack"]
        if not rep["pass"]:
            failures += 1
            worst = inst
    # tightness: identical propensities give zero on both sides
    tight = random_instance(rng, WeightScheme("ow"), perturbation=0.0)
    tight = DiscreteInstance(tight.probs, tight.e_true, tight.e_true.copy(), tight.scheme)
    tight_rep = kl_and_tvd_check(tight)
    tight_ok = bool(tight_rep["kl"] < TOL and tight_rep["kl_bound"] < TOL)
    return {
        "suite": "divergence-bounds",
        "instances": count,
        "failures": failures,
        "min_kl_slack": float(min_kl_slack),
        "min_tvd_slack": float(min_tvd_slack),
        "tight_at_gamma_one": tight_ok,
        "pass": bool(failures == 0 and tight_ok),
        "worst_instance": worst.to_dict() if worst is not None else None,
    }


def run_ipm_bound_suite(
    n_instances: int = 500, seed: int = 2, k_max: int = 8, dim: int = 3
) -> dict:
    """Wasserstein and MMD bounds on randomly embedded supports."""
    rng = np.random.default_rng(seed)
    min_slacks = {"wass": np.inf, "mmd_lin": np.inf, "mmd_rbf": np.inf}
    failures = 0
    worst = None
    count = 0
    for _ in range(n_instances):
        kind = PROPENSITY_SCHEMES[int(rng.integers(len(PROPENSITY_SCHEMES)))]
        inst = random_instance(
            rng, WeightScheme(kind), k_max=k_max, perturbation=rng.uniform(0.0, 2.0)
        )
        embedding = rng.normal(0.0, 1.0, (inst.k, dim))
        rep = ipm_bound_check(inst, embedding)
        count += 1
        for key in ("wass", "mmd_lin", "mmd_rbf"):
            if rep[f"{key}_slack"] < min_slacks[key]:
                min_slacks[key] = rep[f"{key}_slack"]
        if not rep["pass"]:
            failures += 1
            worst = {"instance": inst.to_dict(), "embedding": embedding.tolist()}
    return {
        "suite": "ipm-bounds",
        "instances": count,
        "failures": failures,
        "min_slack": {k: float(v) for k, v in min_slacks.items()},
        "pass": failures == 0,
        "worst_instance": worst,
    }


def run_sandwich_suite(n_instances: int = 500, seed: int = 3) -> dict:
    """PEHE sandwich for the bounded-tilt schemes (truncated included,
    with propensities inside the truncation band)."""
    rng = np.random.default_rng(seed)
    failures = 0
    worst = None
    count = 0
    for _ in range(n_instances):
        kind = ("mw", "ow", "truncipw")[int(rng.integers(3))]
        inst = random_instance(rng, WeightScheme(kind))
        sq_errors = rng.uniform(0.0, 4.0, inst.k)
        rep = pehe_sandwich_constants(inst, sq_errors)
        count += 1
        if not rep["pass"]:
            failures += 1
            worst = {"instance": inst.to_dict(), "sq_errors": sq_errors.tolist()}
    return {
        "suite": "pehe-sandwich",
        "instances": count,
        "failures": failures,
        "pass": failures == 0,
        "worst_instance": worst,
    }


def run_all_suites(
    balance_instances: int = 1000,
    divergence_instances: int = 1000,
    ipm_instances: int = 500,
    sandwich_instances: int = 500,
    seed: int = 0,
) -> dict:
    """Full verification battery; instance counts of zero skip a suite."""
    suites = []
    if balance_instances > 0:
        suites.append(run_balance_suite(balance_instances, seed))
    if divergence_instances > 0:
        suites.append(run_divergence_suite(divergence_instances, seed + 1))
    if ipm_instances > 0:
        suites.append(run_ipm_bound_suite(ipm_instances, seed + 2))
    if sandwich_instances > 0:
        suites.append(run_sandwich_suite(sandwich_instances, seed + 3))
    return {"suites": suites, "pass": all(s["pass"] for s in suites)}


def replay_instance(path: str) -> dict:
    """Re-run the divergence check for a serialized instance."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    inst = DiscreteInstance.from_dict(doc["instance"] if "instance" in doc else doc)
    return kl_and_tvd_check(inst)
