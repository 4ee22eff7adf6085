"""Self-contained scalar normal kernel: pdf, cdf, survival, quantile, positive-part moments.

Staffing roots live deep in the normal tail, so the cdf and survival function go
through erfc rather than a literal 1 - Phi(x), keeping full relative accuracy on
both sides. The quantile is a rational approximation refined by Newton steps on
the survival function, so the package has no external dependency for it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class NormalParams:
    """Mean and standard deviation of a scalar normal; sigma must be > 0."""

    mean: float
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0):
            raise ValueError(f"sigma must be > 0, got {self.sigma!r}")


@dataclass(frozen=True)
class PositivePartMoments:
    """Mean, raw second moment, and variance of max(X, 0)."""

    mean: float
    second: float
    variance: float


def phi(x: float) -> float:
    """Standard normal density."""
    return _INV_SQRT_2PI * math.exp(-0.5 * x * x)


def Phi(x: float) -> float:
    """Standard normal cdf."""
    return 0.5 * math.erfc(-x / _SQRT2)


def Phi_bar(x: float) -> float:
    """Standard normal survival function 1 - Phi(x), accurate in the right tail."""
    return 0.5 * math.erfc(x / _SQRT2)


# Rational quantile approximation (Acklam), relative error below 1.2e-9 over (0, 1).
# Two Newton corrections on Phi_bar then push the defect in eps below 1e-14.
_ACKLAM_A = (
    -3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
    1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00,
)
_ACKLAM_B = (
    -5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
    6.680131188771972e01, -1.328068155288572e01,
)
_ACKLAM_C = (
    -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
    -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00,
)
_ACKLAM_D = (
    7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
    3.754408661907416e00,
)
_ACKLAM_SPLIT = 0.02425


def _quantile_seed(prob: float) -> float:
    """Acklam's approximation to the lower quantile Phi^{-1}(prob)."""
    a, b, c, d = _ACKLAM_A, _ACKLAM_B, _ACKLAM_C, _ACKLAM_D
    if prob < _ACKLAM_SPLIT:
        t = math.sqrt(-2.0 * math.log(prob))
        return (((((c[0] * t + c[1]) * t + c[2]) * t + c[3]) * t + c[4]) * t + c[5]) / (
            (((d[0] * t + d[1]) * t + d[2]) * t + d[3]) * t + 1.0
        )
    if prob > 1.0 - _ACKLAM_SPLIT:
        t = math.sqrt(-2.0 * math.log(1.0 - prob))
        return -(((((c[0] * t + c[1]) * t + c[2]) * t + c[3]) * t + c[4]) * t + c[5]) / (
            (((d[0] * t + d[1]) * t + d[2]) * t + d[3]) * t + 1.0
        )
    u = prob - 0.5
    t = u * u
    return (((((a[0] * t + a[1]) * t + a[2]) * t + a[3]) * t + a[4]) * t + a[5]) * u / (
        ((((b[0] * t + b[1]) * t + b[2]) * t + b[3]) * t + b[4]) * t + 1.0
    )


def Phi_bar_inv(eps: float) -> float:
    """Upper quantile: the z with Phi_bar(z) = eps, for eps in (0, 1)."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps!r}")
    z = -_quantile_seed(eps)
    for _ in range(2):
        z += (Phi_bar(z) - eps) / phi(z)
    return z


def expected_positive_part(d: NormalParams) -> float:
    """E[max(X, 0)] for X ~ N(mean, sigma^2): sigma*phi(m/s) + m*Phi(m/s)."""
    a = d.mean / d.sigma
    return d.sigma * phi(a) + d.mean * Phi(a)


def positive_part_moments(d: NormalParams) -> PositivePartMoments:
    """First two moments and variance of max(X, 0) for X ~ N(mean, sigma^2)."""
    m, s = d.mean, d.sigma
    a = m / s
    cdf = Phi(a)
    dens = phi(a)
    mean = m * cdf + s * dens
    second = (m * m + s * s) * cdf + m * s * dens
    # second - mean^2 can dip an ulp below zero when one tail dominates
    return PositivePartMoments(mean, second, max(second - mean * mean, 0.0))
