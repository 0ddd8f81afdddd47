"""Tilting functions and the balancing weights they induce.

Each scheme picks a target population g(x) proportional to f(x)p(x);
the weight w(x,t) = f(x) / (t*e(x) + (1-t)*(1-e(x))) moves each arm
toward g. "uniform" is the unweighted baseline (w = 1 regardless of the
propensity) so every experiment compares schemes under one code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Array = np.ndarray

SCHEME_NAMES = ("ipw", "truncipw", "mw", "ow", "uniform")


@dataclass(frozen=True)
class WeightScheme:
    """One of ipw | truncipw | mw | ow | uniform; xi is the truncation cut."""

    kind: str
    xi: float = 0.1

    def __post_init__(self) -> None:
        if self.kind not in SCHEME_NAMES:
            raise ValueError(f"unknown weight scheme {self.kind!r}; "
                             f"expected one of {SCHEME_NAMES}")
        if not 0.0 < self.xi < 0.5:
            raise ValueError(f"xi must lie in (0, 0.5), got {self.xi}")

    @property
    def propensity_free(self) -> bool:
        return self.kind == "uniform"


def scheme_from_config(entry) -> WeightScheme:
    """Accept "ow" or {"kind": "truncipw", "xi": 0.1}."""
    if isinstance(entry, WeightScheme):
        return entry
    if isinstance(entry, str):
        return WeightScheme(entry)
    return WeightScheme(entry["kind"], float(entry.get("xi", 0.1)))


def _check_propensity(e: Array) -> Array:
    e = np.asarray(e, dtype=np.float64)
    if np.any(e <= 0.0) or np.any(e >= 1.0):
        raise ValueError("propensity values must lie strictly inside (0, 1)")
    return e


def tilting(scheme: WeightScheme, e):
    """Tilting function f evaluated at propensity e (scalar or array)."""
    e = _check_propensity(e)
    if scheme.kind in ("ipw", "uniform"):
        out = np.ones_like(e)
    elif scheme.kind == "truncipw":
        out = ((e > scheme.xi) & (e < 1.0 - scheme.xi)).astype(np.float64)
    elif scheme.kind == "mw":
        out = np.minimum(e, 1.0 - e)
    else:  # ow
        out = e * (1.0 - e)
    return out if out.ndim else float(out)


def balancing_weight(scheme: WeightScheme, e, t):
    """Weight w(x,t) = f / (t*e + (1-t)*(1-e)); for uniform, 1 regardless of e."""
    e = _check_propensity(e)
    t = np.asarray(t)
    if not np.all(np.isin(t, (0, 1))):
        raise ValueError("treatment indicator must be binary")
    if scheme.propensity_free:
        out = np.ones(np.broadcast_shapes(e.shape, t.shape))
    else:
        denom = np.where(t == 1, e, 1.0 - e)
        out = np.asarray(tilting(scheme, e)) / denom
    return out if out.ndim else float(out)


def batch_weights(scheme: WeightScheme, model, X: Array, T: Array) -> Array:
    """Per-unit weights w(X_i, T_i) through a fitted propensity model."""
    from .propensity import predict_propensity

    e = predict_propensity(model, X)
    return balancing_weight(scheme, e, T)
