"""Fluctuations around the fluid steady state: drift Jacobian, event-noise matrix,
2x2 Lyapunov solver, stationary second moments, and the covariance-sign window."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .fluid import FixedPoint, fixed_point
from .model import ModelParams, Regime, RegimeTag, classify


class StabilityError(ValueError):
    """The drift Jacobian is not Hurwitz, so no stationary covariance exists."""


@dataclass(frozen=True)
class Matrix2:
    a11: float
    a12: float
    a21: float
    a22: float

    @classmethod
    def from_array(cls, m) -> "Matrix2":
        return cls(float(m[0][0]), float(m[0][1]), float(m[1][0]), float(m[1][1]))

    def to_array(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a21, self.a22]])

    def max_abs(self) -> float:
        return max(abs(self.a11), abs(self.a12), abs(self.a21), abs(self.a22))


@dataclass(frozen=True)
class MomentSet:
    """Stationary second moments of (Q, S).

    v_qq, v_ss, v_qs hold the regime closures used by the staffing rules. In
    overload the closure keeps v_qq = lam/theta, dropping the covariance
    coupling; v_exact carries the full Lyapunov solution, whose (1,1) entry is
    lam/theta - (mu - theta) * v_qs / theta.
    """

    v_qq: float
    v_ss: float
    v_qs: float
    regime: Regime
    j: Matrix2
    sigma: Matrix2
    v_exact: Matrix2


@dataclass(frozen=True)
class CovSignThresholds:
    """Service-rate window (mu_neg, mu_ol) where overload shows negative Cov(Q, S).

    mu_neg: above this, Cov(Q, S) < 0 (infinite when p = 1).
    mu_ol: below this, the system stays overloaded (infinite when gamma*c <= lam*p,
    in which case the system is overloaded for every service rate).
    """

    mu_neg: float
    mu_ol: float
    window_nonempty: bool


# Increment vectors of the primitive transitions in (q, s).
_ARRIVAL = (1.0, 0.0)
_COMPLETION_PLAIN = (-1.0, 0.0)
_COMPLETION_CHARGE = (-1.0, -1.0)
_ABANDON = (-1.0, 0.0)
_RETURN = (0.0, 1.0)


def _event_rates(params: ModelParams, q: float, s: float) -> list[tuple[tuple[float, float], float]]:
    busy = min(q, s)
    return [
        (_ARRIVAL, params.lam),
        (_COMPLETION_PLAIN, (1.0 - params.p) * params.mu * busy),
        (_COMPLETION_CHARGE, params.p * params.mu * busy),
        (_ABANDON, params.theta * max(q - s, 0.0)),
        (_RETURN, params.gamma * (params.c - s)),
    ]


def jacobian_sigma(params: ModelParams, fp: FixedPoint) -> tuple[Matrix2, Matrix2]:
    """Drift Jacobian J and event-noise matrix Sigma at the fixed point.

    Sigma is assembled from the primitive event table (rate times increment
    outer product) and cross-checked against the simplified form
    [[2*lam, p*mu*x], [p*mu*x, 2*p*mu*x]] with x the busy-server level; a
    mismatch means the fixed point does not belong to these parameters.
    """
    overloaded = fp.regime.tag is RegimeTag.OVERLOADED
    if fp.regime.tag is RegimeTag.CRITICAL:
        warnings.warn(
            "critical regime: using underloaded matrices; the diffusion "
            "approximation is least reliable on the boundary",
            stacklevel=2,
        )

    sigma = np.zeros((2, 2))
    for (dq, ds), rate in _event_rates(params, fp.q_star, fp.s_star):
        v = np.array([dq, ds])
        sigma += rate * np.outer(v, v)

    x = fp.s_star if overloaded else fp.q_star
    pmux = params.p * params.mu * x
    simplified = np.array([[2.0 * params.lam, pmux], [pmux, 2.0 * pmux]])
    scale = max(abs(simplified).max(), 1.0)
    if abs(sigma - simplified).max() > 1e-9 * scale:
        raise ValueError(
            "fixed point is inconsistent with the parameters: event-rate "
            f"assembly {sigma.tolist()} does not match the simplified noise "
            f"matrix {simplified.tolist()}"
        )

    if overloaded:
        j = Matrix2(
            -params.theta, params.theta - params.mu,
            0.0, -(params.gamma + params.p * params.mu),
        )
    else:
        j = Matrix2(-params.mu, 0.0, -params.p * params.mu, -params.gamma)
    return j, Matrix2.from_array(sigma)


def solve_lyapunov(j: Matrix2, sigma: Matrix2) -> Matrix2:
    """Unique symmetric V with J V + V J^T + Sigma = 0, for Hurwitz J.

    The 2x2 Hurwitz property is exactly trace < 0 and det > 0; the equation is
    linearized into a 3x3 system on (v11, v12, v22).
    """
    trace = j.a11 + j.a22
    det = j.a11 * j.a22 - j.a12 * j.a21
    if not (trace < 0 and det > 0):
        raise StabilityError(
            f"Jacobian is not Hurwitz (trace={trace!r}, det={det!r}); "
            "the fluctuation process has no stationary covariance"
        )
    a, b, d, e = j.a11, j.a12, j.a21, j.a22
    m = np.array([
        [2.0 * a, 2.0 * b, 0.0],
        [d, a + e, b],
        [0.0, 2.0 * d, 2.0 * e],
    ])
    rhs = -np.array([sigma.a11, sigma.a12, sigma.a22])
    v11, v12, v22 = np.linalg.solve(m, rhs)
    return Matrix2(float(v11), float(v12), float(v12), float(v22))


def lyapunov_residual(j: Matrix2, v: Matrix2, sigma: Matrix2) -> float:
    """Max-abs entry of J V + V J^T + Sigma."""
    jm, vm, sm = j.to_array(), v.to_array(), sigma.to_array()
    return float(abs(jm @ vm + vm @ jm.T + sm).max())


def stationary_moments(params: ModelParams) -> MomentSet:
    """Closure moments per regime, with the generic Lyapunov solution alongside.

    Underloaded: (lam/mu, lam*p/gamma, 0). Overloaded: v_qq = lam/theta,
    v_ss = c*gamma*p*mu/(gamma+p*mu)^2, v_qs = v_ss*(gamma+theta+p*mu-mu)/
    (theta+gamma+p*mu). The closures are checked against the solver output,
    which in overload carries the exact v_qq = lam/theta - (mu-theta)*v_qs/theta.
    """
    fp = fixed_point(params)
    j, sigma = jacobian_sigma(params, fp)
    v = solve_lyapunov(j, sigma)

    if fp.regime.tag is RegimeTag.OVERLOADED:
        beta = params.gamma + params.p * params.mu
        v_ss = params.c * params.gamma * params.p * params.mu / (beta * beta)
        v_qs = v_ss * (params.gamma + params.theta + params.p * params.mu - params.mu) / (
            params.theta + beta
        )
        v_qq = params.lam / params.theta
        v_qq_solver = v_qq - (params.mu - params.theta) * v_qs / params.theta
    else:
        v_qq = params.lam / params.mu
        v_ss = params.lam * params.p / params.gamma
        v_qs = 0.0
        v_qq_solver = v_qq

    scale = max(abs(v_qq_solver), abs(v_ss), 1.0)
    for name, closed, solved in (
        ("v_qq", v_qq_solver, v.a11),
        ("v_qs", v_qs, v.a12),
        ("v_ss", v_ss, v.a22),
    ):
        if abs(closed - solved) > max(1e-9 * max(abs(closed), abs(solved)), 1e-12 * scale):
            raise RuntimeError(
                f"closed-form {name}={closed!r} disagrees with the Lyapunov "
                f"solution {solved!r}"
            )
    return MomentSet(v_qq, v_ss, v_qs, fp.regime, j, sigma, v)


def covariance_sign_thresholds(lam: float, theta: float, p: float, gamma: float, c: float) -> CovSignThresholds:
    """Service-rate thresholds bracketing negative queue-server covariance in overload."""
    mu_neg = (gamma + theta) / (1.0 - p) if p < 1.0 else math.inf
    denom = gamma * c - lam * p
    mu_ol = lam * gamma / denom if denom > 0 else math.inf
    if denom > 0:
        nonempty = mu_neg < mu_ol
    else:
        nonempty = math.isfinite(mu_neg)
    return CovSignThresholds(mu_neg, mu_ol, nonempty)
