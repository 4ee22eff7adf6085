"""Model primitives, parameter validation, and load-regime classification."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum


class ParamError(ValueError):
    """One or more model parameters violate their constraints."""


class RegimeTag(Enum):
    UNDERLOADED = "UL"
    OVERLOADED = "OL"
    CRITICAL = "critical"


@dataclass(frozen=True)
class ModelParams:
    """The six primitives of the charging queue.

    lam: arrival rate (customers per unit time, > 0)
    mu: service rate per busy server (> 0)
    theta: abandonment rate per waiting customer (> 0)
    p: probability a completing server leaves to charge (in [0, 1])
    gamma: charge-completion rate per charging server (> 0)
    c: server count (real > 0 for analytics; the simulator needs an integer)
    """

    lam: float
    mu: float
    theta: float
    p: float
    gamma: float
    c: float

    @property
    def offered_load(self) -> float:
        """Effective demand in servers: lam/mu + lam*p/gamma."""
        return self.lam / self.mu + self.lam * self.p / self.gamma

    def with_c(self, c: float) -> "ModelParams":
        return ModelParams(self.lam, self.mu, self.theta, self.p, self.gamma, float(c))


@dataclass(frozen=True)
class Regime:
    """Load regime with the signed staffing margin c - (lam/mu + lam*p/gamma)."""

    tag: RegimeTag
    load_margin: float


@dataclass(frozen=True)
class Kappa:
    """Long-run available fraction of servers in overload: gamma/(gamma + p*mu)."""

    value: float


def _finite_real(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def validate(lam, mu, theta, p, gamma, c) -> ModelParams:
    """Check all parameter constraints, reporting every violated field at once."""
    problems = []
    for name, value in (("lam", lam), ("mu", mu), ("theta", theta), ("gamma", gamma)):
        if not _finite_real(value) or value <= 0:
            problems.append(f"{name} must be a finite real > 0, got {value!r}")
    if not _finite_real(p) or not 0.0 <= p <= 1.0:
        problems.append(f"p must lie in [0, 1], got {p!r}")
    if not _finite_real(c) or c <= 0:
        problems.append(f"c must be a finite real > 0, got {c!r}")
    if not problems:
        params = ModelParams(float(lam), float(mu), float(theta), float(p), float(gamma), float(c))
        if math.isfinite(params.offered_load):
            return params
        problems.append("offered load lam/mu + lam*p/gamma overflows for these rates")
    raise ParamError("invalid model parameters: " + "; ".join(problems))


def classify(params: ModelParams) -> Regime:
    """Classify by the sign of the staffing margin (exact comparison, no tolerance)."""
    margin = params.c - params.offered_load
    if margin > 0:
        tag = RegimeTag.UNDERLOADED
    elif margin < 0:
        tag = RegimeTag.OVERLOADED
    else:
        tag = RegimeTag.CRITICAL
    return Regime(tag, margin)


def kappa(params: ModelParams) -> Kappa:
    return Kappa(params.gamma / (params.gamma + params.p * params.mu))
