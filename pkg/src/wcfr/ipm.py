"""Weighted integral probability metrics between reweighted empirical
representation distributions.

Two families are provided: MMD with linear/RBF kernels, computed as the
self-normalized weighted V-statistic whose within-group sums exclude the
i = j pairs, and an entropic Wasserstein approximation via a fixed number
of Sinkhorn-Knopp scaling iterations on K = exp(-lam * M) with M the
pairwise Euclidean (not squared) distance matrix. Gradients with respect
to the support points are exact: the Sinkhorn gradient differentiates
through the unrolled iterations, with the weights held constant.

exact_ot_cost is a small-instance linear-programming oracle used to
verify the Sinkhorn approximation; it is never part of a training path.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.optimize import linprog

Array = np.ndarray

K_FLOOR = 1e-300  # exp(-lam*M) is floored here before any division chain


class DegenerateArmWarning(UserWarning):
    """A group had fewer than two positive-weight points; its within-group
    V-statistic term was defined as zero."""


class IpmError(ValueError):
    """Invalid inputs or numerical breakdown in a discrepancy computation."""


@dataclass
class WeightedSample:
    """Point cloud with nonnegative weights; at least one weight positive."""

    points: Array
    weights: Array

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.points.ndim != 2:
            raise IpmError(f"points must be 2-D, got shape {self.points.shape}")
        if self.weights.shape != (self.points.shape[0],):
            raise IpmError("weights must align with the rows of points")
        if not np.all(np.isfinite(self.points)):
            raise IpmError("non-finite points")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise IpmError("weights must be finite and nonnegative")
        if not np.any(self.weights > 0):
            raise IpmError("at least one weight must be strictly positive")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def positive_mask(self) -> Array:
        return self.weights > 0


@dataclass(frozen=True)
class SinkhornWasserstein:
    lam: float = 10.0
    iters: int = 10

    def __post_init__(self) -> None:
        if self.lam <= 0:
            raise IpmError("entropic strength lam must be positive")
        if self.iters < 1:
            raise IpmError("need at least one Sinkhorn iteration")


@dataclass(frozen=True)
class MmdLinear:
    pass


@dataclass(frozen=True)
class MmdRbf:
    sigma: float = 0.1

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise IpmError("RBF bandwidth sigma must be positive")


IpmSpec = Union[SinkhornWasserstein, MmdLinear, MmdRbf]

IPM_NAMES = ("wass", "mmd-lin", "mmd-rbf")


def ipm_spec_from_config(entry) -> IpmSpec:
    """Accept "wass" or {"kind": "mmd-rbf", "sigma": 0.1} style entries."""
    if isinstance(entry, (SinkhornWasserstein, MmdLinear, MmdRbf)):
        return entry
    if isinstance(entry, str):
        entry = {"kind": entry}
    kind = entry["kind"]
    if kind == "wass":
        return SinkhornWasserstein(
            lam=float(entry.get("lam", 10.0)), iters=int(entry.get("iters", 10))
        )
    if kind == "mmd-lin":
        return MmdLinear()
    if kind == "mmd-rbf":
        return MmdRbf(sigma=float(entry.get("sigma", 0.1)))
    raise IpmError(f"unknown IPM kind {kind!r}; expected one of {IPM_NAMES}")


def ipm_spec_name(spec: IpmSpec) -> str:
    if isinstance(spec, SinkhornWasserstein):
        return "wass"
    if isinstance(spec, MmdLinear):
        return "mmd-lin"
    return "mmd-rbf"


def pairwise_distances(xa: Array, xb: Array) -> Array:
    """Euclidean distance matrix, clipped at zero before the square root."""
    sq = (
        np.sum(xa * xa, axis=1)[:, None]
        + np.sum(xb * xb, axis=1)[None, :]
        - 2.0 * (xa @ xb.T)
    )
    return np.sqrt(np.maximum(sq, 0.0))


def kernel_matrix(spec: Union[MmdLinear, MmdRbf], xa: Array, xb: Array) -> Array:
    if isinstance(spec, MmdLinear):
        return xa @ xb.T
    d = pairwise_distances(xa, xb)
    return np.exp(-(d * d) / (spec.sigma**2))


# ---------------------------------------------------------------------------
# Weighted MMD^2 (V-statistic, within-group i = j pairs excluded)
# ---------------------------------------------------------------------------


def _within_term(w: Array, kmat: Array) -> tuple[float, bool]:
    denom = float(w.sum() ** 2 - np.sum(w * w))
    if np.count_nonzero(w > 0) < 2 or denom <= 0.0:
        return 0.0, True
    num = float(w @ kmat @ w - np.sum(w * w * np.diag(kmat)))
    return num / denom, False


def weighted_mmd2(
    spec: Union[MmdLinear, MmdRbf], a: WeightedSample, b: WeightedSample
) -> float:
    """<mu_a,mu_a> + <mu_b,mu_b> - 2<mu_a,mu_b> with self-normalized weights.

    A group with fewer than two positive-weight points contributes a zero
    within-group term and raises DegenerateArmWarning.
    """
    if isinstance(spec, SinkhornWasserstein):
        raise IpmError("weighted_mmd2 expects an MMD spec")
    kaa = kernel_matrix(spec, a.points, a.points)
    kbb = kernel_matrix(spec, b.points, b.points)
    kab = kernel_matrix(spec, a.points, b.points)
    term_a, deg_a = _within_term(a.weights, kaa)
    term_b, deg_b = _within_term(b.weights, kbb)
    if deg_a or deg_b:
        warnings.warn(
            "within-group term defined as 0 for a group with <2 positive weights",
            DegenerateArmWarning,
            stacklevel=2,
        )
    cross = float(a.weights @ kab @ b.weights) / float(
        a.weights.sum() * b.weights.sum()
    )
    return term_a + term_b - 2.0 * cross


def _kernel_grad_pair(spec, xa, xb, coeff):
    """Gradients of sum_ij coeff_ij * k(xa_i, xb_j) w.r.t. xa and xb."""
    if isinstance(spec, MmdLinear):
        return coeff @ xb, coeff.T @ xa
    kab = kernel_matrix(spec, xa, xb)
    pref = coeff * kab * (-2.0 / spec.sigma**2)
    ga = pref.sum(axis=1)[:, None] * xa - pref @ xb
    gb = pref.sum(axis=0)[:, None] * xb - pref.T @ xa
    return ga, gb


def weighted_mmd2_with_grad(
    spec: Union[MmdLinear, MmdRbf], a: WeightedSample, b: WeightedSample
) -> tuple[float, Array, Array]:
    """MMD^2 and its gradient w.r.t. both point sets (weights constant)."""
    value = weighted_mmd2(spec, a, b)
    wa, wb = a.weights, b.weights
    ga = np.zeros_like(a.points)
    gb = np.zeros_like(b.points)

    denom_a = float(wa.sum() ** 2 - np.sum(wa * wa))
    if np.count_nonzero(wa > 0) >= 2 and denom_a > 0.0:
        coeff = np.outer(wa, wa) / denom_a
        np.fill_diagonal(coeff, 0.0)
        g1, g2 = _kernel_grad_pair(spec, a.points, a.points, coeff)
        ga += g1 + g2
    denom_b = float(wb.sum() ** 2 - np.sum(wb * wb))
    if np.count_nonzero(wb > 0) >= 2 and denom_b > 0.0:
        coeff = np.outer(wb, wb) / denom_b
        np.fill_diagonal(coeff, 0.0)
        g1, g2 = _kernel_grad_pair(spec, b.points, b.points, coeff)
        gb += g1 + g2
    coeff = np.outer(wa, wb) * (-2.0 / float(wa.sum() * wb.sum()))
    g1, g2 = _kernel_grad_pair(spec, a.points, b.points, coeff)
    ga += g1
    gb += g2
    return value, ga, gb


# ---------------------------------------------------------------------------
# Entropic Wasserstein via unrolled Sinkhorn-Knopp scaling
# ---------------------------------------------------------------------------


def _normalized_arm(s: WeightedSample) -> tuple[Array, Array, Array]:
    mask = s.positive_mask()
    w = s.weights[mask]
    total = w.sum()
    if total <= 0.0:
        raise IpmError("arm has zero total weight")
    return s.points[mask], w / total, mask


def _sinkhorn_forward(a, b, kmat, kt, iters, keep_tape):
    u = a.copy()
    tape = []
    for _ in range(iters):
        p = kmat.T @ u
        q = b / p
        t = kt @ q
        u_next = 1.0 / t
        if keep_tape:
            tape.append((u, p, q, t))
        u = u_next
    p_final = kmat.T @ u
    v = b / p_final
    return u, v, p_final, tape


def sinkhorn_wasserstein(
    spec: SinkhornWasserstein, a: WeightedSample, b: WeightedSample
) -> float:
    """Entropic transport cost sum_ij T*_ij M_ij after `iters` scaling steps.

    Weights are normalized to probability vectors; zero-weight atoms carry
    no mass and are dropped. The result is the (biased) entropic cost, not
    a debiased divergence, so identical inputs give a small positive value.
    """
    value, _, _ = _sinkhorn_core(spec, a, b, want_grad=False)
    return value


def sinkhorn_with_grad(
    spec: SinkhornWasserstein, a: WeightedSample, b: WeightedSample
) -> tuple[float, Array, Array]:
    """Cost and its gradient w.r.t. both point sets, through the unrolled
    iterations (weights treated as constants)."""
    return _sinkhorn_core(spec, a, b, want_grad=True)


def _sinkhorn_core(spec, a, b, want_grad):
    xa, aw, mask_a = _normalized_arm(a)
    xb, bw, mask_b = _normalized_arm(b)
    lam = spec.lam
    m = pairwise_distances(xa, xb)
    emat = np.exp(-lam * m)
    kmat = np.maximum(emat, K_FLOOR)
    kt = kmat / aw[:, None]
    u, v, p_final, tape = _sinkhorn_forward(aw, bw, kmat, kt, spec.iters, want_grad)
    km = kmat * m
    cost = float(u @ km @ v)
    if not np.isfinite(cost) or not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise IpmError(
            "Sinkhorn scaling underflowed; use a smaller lam or rescale the "
            "representations"
        )
    if not want_grad:
        return cost, None, None

    # reverse pass: adjoints of cost = u^T (K o M) v
    u_bar = km @ v
    v_bar = km.T @ u
    uv = u[:, None] * v[None, :]
    k_bar = uv * m
    m_bar = uv * kmat
    # v = b / p_final; p_final = K^T u
    p_bar = -(v_bar * v) / p_final
    k_bar += u[:, None] * p_bar[None, :]
    u_bar += kmat @ p_bar
    kt_bar = np.zeros_like(kmat)
    for u_s, p_s, q_s, t_s in reversed(tape):
        u_next = 1.0 / t_s
        t_bar = -u_bar * u_next * u_next
        kt_bar += t_bar[:, None] * q_s[None, :]
        q_bar = kt.T @ t_bar
        p_bar = -(q_bar * q_s) / p_s
        k_bar += u_s[:, None] * p_bar[None, :]
        u_bar = kmat @ p_bar
    k_bar += kt_bar / aw[:, None]
    m_bar += -lam * emat * (emat > K_FLOOR) * k_bar
    # M_ij = ||xa_i - xb_j||: zero-distance pairs get zero gradient
    d = np.where(m > 0, m_bar / np.where(m > 0, m, 1.0), 0.0)
    ga_local = d.sum(axis=1)[:, None] * xa - d @ xb
    gb_local = d.sum(axis=0)[:, None] * xb - d.T @ xa
    ga = np.zeros_like(a.points)
    gb = np.zeros_like(b.points)
    ga[mask_a] = ga_local
    gb[mask_b] = gb_local
    return cost, ga, gb


# ---------------------------------------------------------------------------
# Unified dispatch
# ---------------------------------------------------------------------------


def ipm_value(spec: IpmSpec, a: WeightedSample, b: WeightedSample) -> float:
    if isinstance(spec, SinkhornWasserstein):
        return sinkhorn_wasserstein(spec, a, b)
    return weighted_mmd2(spec, a, b)


def ipm_with_grad(
    spec: IpmSpec, a: WeightedSample, b: WeightedSample
) -> tuple[float, Array, Array]:
    if isinstance(spec, SinkhornWasserstein):
        return sinkhorn_with_grad(spec, a, b)
    return weighted_mmd2_with_grad(spec, a, b)


def ipm_gradient(spec: IpmSpec, a: WeightedSample, b: WeightedSample) -> tuple[Array, Array]:
    """Gradient of the scalar discrepancy w.r.t. every point coordinate."""
    _, ga, gb = ipm_with_grad(spec, a, b)
    return ga, gb


# ---------------------------------------------------------------------------
# Exact optimal transport (verification oracle)
# ---------------------------------------------------------------------------

MAX_EXACT_OT = 64


def exact_ot_cost(a: WeightedSample, b: WeightedSample) -> float:
    """Exact min sum_ij T_ij M_ij over couplings with the given marginals.

    Solved as a linear program; restricted to n*m <= 64 variables.
    """
    xa, aw, _ = _normalized_arm(a)
    xb, bw, _ = _normalized_arm(b)
    n, m = xa.shape[0], xb.shape[0]
    if n * m > MAX_EXACT_OT:
        raise IpmError(f"exact OT limited to n*m <= {MAX_EXACT_OT}, got {n * m}")
    cost = pairwise_distances(xa, xb).ravel()
    # marginal constraints; the last column constraint is redundant
    a_eq = np.zeros((n + m, n * m))
    for i in range(n):
        a_eq[i, i * m : (i + 1) * m] = 1.0
    for j in range(m):
        a_eq[n + j, j::m] = 1.0
    b_eq = np.concatenate([aw, bw])
    res = linprog(cost, A_eq=a_eq[:-1], b_eq=b_eq[:-1], bounds=(0, None), method="highs")
    if not res.success:
        raise IpmError(f"exact OT solver failed: {res.message}")
    return float(res.fun)


def exact_mmd2(
    spec: Union[MmdLinear, MmdRbf], xa: Array, pa: Array, xb: Array, pb: Array
) -> float:
    """Population MMD^2 between two finite discrete distributions.

    This is the exact mean-embedding distance (diagonal included), used by
    the theory-verification suites rather than the empirical V-statistic.
    """
    kaa = kernel_matrix(spec, xa, xa)
    kbb = kernel_matrix(spec, xb, xb)
    kab = kernel_matrix(spec, xa, xb)
    val = float(pa @ kaa @ pa + pb @ kbb @ pb - 2.0 * (pa @ kab @ pb))
    return max(val, 0.0)
