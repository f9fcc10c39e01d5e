"""Standard-normal quantiles and Used-Capacity-at-Confidence (UCaC) arithmetic.

A machine hosting independent Gaussian containers has UCaC

    U = sum(mean) + D(alpha) * sqrt(sum(variance)),

where ``D(alpha)`` is the alpha-quantile of the standard normal. The chance
constraint ``Pr(load <= V) >= alpha`` then reads ``U <= V``.

Functions here take duck-typed loads (anything with ``sum_mean`` and
``sum_uncertainty``) and services (``mean``, ``uncertainty``) so the module
has no dependency on the domain types.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

FEAS_TOL = 1e-9

# Acklam's rational approximation, |relative error| < 1.15e-9 before refinement.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def normal_sf(x: float) -> float:
    """Upper tail ``1 - Phi(x)`` without cancellation for large ``x``."""
    return 0.5 * math.erfc(x / _SQRT2)


def _acklam(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return ((((( _C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    if p > 1.0 - _P_LOW:
        q = math.sqrt(-2.0 * math.log1p(-p))
        return -((((( _C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    q = p - 0.5
    r = q * q
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
        (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)


def normal_quantile(p: float) -> float:
    """Inverse standard-normal CDF.

    Rational approximation followed by one Newton step against an
    erfc-based CDF; the residual is evaluated on the tail nearest to ``p``
    so the step does not lose precision to cancellation.
    """
    if not (0.0 < p < 1.0) or math.isnan(p):
        raise ValueError(f"quantile probability must lie in (0, 1), got {p!r}")
    if p == 0.5:
        return 0.0
    x = _acklam(p)
    if p > 0.5:
        err = (1.0 - p) - normal_sf(x)
    else:
        err = normal_cdf(x) - p
    # d/dx Phi(x) = pdf(x); upper-tail residual has the opposite sign
    pdf = math.exp(-0.5 * x * x) / _SQRT2PI
    x -= err / pdf
    return x


@dataclass(frozen=True)
class Confidence:
    """Confidence level ``alpha`` with its cached standard-normal quantile."""

    alpha: float
    d_alpha: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0.5 < self.alpha < 1.0):
            raise ValueError(f"alpha must lie in (0.5, 1.0), got {self.alpha!r}")
        object.__setattr__(self, "d_alpha", normal_quantile(self.alpha))


def ucac_value(sum_mean: float, sum_uncertainty: float, d_alpha: float) -> float:
    if sum_uncertainty <= 0.0:
        return sum_mean
    return sum_mean + d_alpha * math.sqrt(sum_uncertainty)


def machine_ucac(load, conf: Confidence) -> float:
    return ucac_value(load.sum_mean, load.sum_uncertainty, conf.d_alpha)


def feasible(load, conf: Confidence, capacity: float) -> bool:
    return machine_ucac(load, conf) <= capacity + FEAS_TOL


def ucac_rows(means, variances, counts, d_alpha: float) -> np.ndarray:
    """Per-machine UCaC for a count matrix (rows = machines, cols = services)."""
    counts = np.asarray(counts, dtype=float)
    sm = counts @ np.asarray(means, dtype=float)
    su = counts @ np.asarray(variances, dtype=float)
    return sm + d_alpha * np.sqrt(np.maximum(su, 0.0))


def cluster_ucac(services, cluster, conf: Confidence, placement=None) -> float:
    """Sum of machine UCaC over the cluster after applying ``placement``.

    Empty machines contribute zero.
    """
    counts = np.asarray(cluster.initial, dtype=np.int64)
    if placement is not None:
        alloc = np.asarray(placement.alloc, dtype=np.int64)
        if alloc.shape != counts.shape:
            raise ValueError(f"placement shape {alloc.shape} != cluster shape {counts.shape}")
        counts = counts + alloc
    if counts.size == 0:
        return 0.0
    means = [s.mean for s in services]
    variances = [s.uncertainty for s in services]
    return float(ucac_rows(means, variances, counts, conf.d_alpha).sum())


def max_fit_count(service, base_load, conf: Confidence, capacity: float, cap: int | None = None) -> int:
    """Largest ``w >= 0`` such that adding ``w`` containers of ``service`` keeps
    the machine within ``capacity``.

    The left-hand side is strictly increasing in ``w`` (mean > 0), so an
    exponential bracket followed by binary search finds the boundary.
    ``cap`` optionally bounds the answer (e.g. remaining demand).
    """
    c0, b0 = base_load.sum_mean, base_load.sum_uncertainty
    mu, b, d = service.mean, service.uncertainty, conf.d_alpha

    def ok(w: int) -> bool:
        return ucac_value(c0 + w * mu, b0 + w * b, d) <= capacity + FEAS_TOL

    if not ok(0) or (cap is not None and cap <= 0):
        return 0
    hi = max(1, int((capacity - c0) / mu) + 1)  # mean alone rules out hi
    if cap is not None:
        if ok(cap):
            return cap
        hi = min(hi, cap)
    lo = 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid
    if ok(hi):
        return hi
    return lo
