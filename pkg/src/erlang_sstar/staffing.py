"""Staffing solvers for delay-probability and abandonment-fraction targets.

Delay targets: a deterministic-server rule (only the queue is random) and a
bivariate-normal rule (queue and servers jointly normal with the regime
closures). Abandonment targets: closed evaluation of alpha(c), a monotone
implicit solver, the fluid feasibility lower bound, and a simulation search
for the empirical minimal integer staffing.

Regime selection when none is forced: solve the underloaded formula first and
accept it when the result satisfies the underloaded condition, otherwise solve
the overloaded formula and check that side; if neither is self-consistent both
candidates are returned with a flag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .model import ModelParams, RegimeTag, classify, validate
from .probability import NormalParams, Phi_bar, Phi_bar_inv, expected_positive_part, phi, Phi, positive_part_moments
from .simulator import MetricSummary, SimConfig, replicate


class InfeasibleError(ValueError):
    """No staffing level can reach the target under the assumed model."""


class DegenerateVarianceError(ValueError):
    """The variance of Q - S is not positive, so the normal model degenerates."""


class VarianceClosureError(ValueError):
    """The overload variance closure sigma^2(c) = lam/theta + u_a*c is not positive."""

    def __init__(self, c: float, u_a: float):
        super().__init__(
            f"variance closure sigma^2(c) <= 0 at c={c!r} (slope u_a={u_a!r}); "
            "the normal approximation does not extend this far"
        )
        self.c = c
        self.u_a = u_a


class Method(Enum):
    FLUID_DETERMINISTIC = "FluidDeterministic"
    BIVARIATE_NORMAL = "BivariateNormal"
    ABANDON_IMPLICIT = "AbandonImplicit"
    ABANDON_FLUID_BOUND = "AbandonFluidBound"
    EMPIRICAL_SIM = "EmpiricalSim"


@dataclass(frozen=True)
class DelayTarget:
    """Target P(Q >= S), strictly between 0 and 1."""

    epsilon: float

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"delay target must lie in (0, 1), got {self.epsilon!r}")


@dataclass(frozen=True)
class AbandonTarget:
    """Target abandonment fraction, strictly between 0 and 1."""

    epsilon: float

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"abandonment target must lie in (0, 1), got {self.epsilon!r}")


@dataclass(frozen=True)
class StaffingAnswer:
    c_real: float
    c_int: int
    method: Method
    regime_assumed: RegimeTag
    diagnostics: dict


@dataclass(frozen=True)
class ExcessMoments:
    mean_excess: float
    var_excess: float
    mean_idle: float
    var_idle: float


def _check_rates(lam, mu, theta, p, gamma) -> None:
    validate(lam, mu, theta, p, gamma, 1.0)


def _boundary(lam, mu, p, gamma) -> float:
    """Staffing level separating the regimes: lam/mu + lam*p/gamma."""
    return lam / mu + lam * p / gamma


def _ceil_snap(c: float) -> int:
    # absorb float dust so an analytically integral c does not round up
    r = round(c)
    if abs(c - r) < 1e-9 * max(1.0, abs(r)):
        return int(r)
    return int(math.ceil(c))


def _fp_at(lam, mu, theta, p, gamma, c, tag: RegimeTag) -> tuple[float, float]:
    """Fluid fixed point evaluated under an assumed regime's formulas."""
    if tag is RegimeTag.OVERLOADED:
        s_star = gamma * c / (gamma + p * mu)
        q_star = (lam - mu * s_star) / theta + s_star
    else:
        q_star = lam / mu
        s_star = c - lam * p / gamma
    return q_star, s_star


def _closures_at(lam, mu, theta, p, gamma, c, tag: RegimeTag) -> tuple[float, float, float]:
    if tag is RegimeTag.OVERLOADED:
        beta = gamma + p * mu
        v_ss = c * gamma * p * mu / (beta * beta)
        v_qs = v_ss * (gamma + theta + p * mu - mu) / (theta + beta)
        return lam / theta, v_ss, v_qs
    return lam / mu, lam * p / gamma, 0.0


def delay_probability(q_star: float, s_star: float, v_qq: float, v_ss: float, v_qs: float) -> float:
    """P(Q >= S) under the joint-normal model: Phi_bar of the standardized gap."""
    var = v_qq + v_ss - 2.0 * v_qs
    if not var > 0:
        raise DegenerateVarianceError(
            f"Var(Q - S) = v_qq + v_ss - 2*v_qs = {var!r} must be > 0"
        )
    return Phi_bar((s_star - q_star) / math.sqrt(var))


def _predicted_delay(lam, mu, theta, p, gamma, c, tag, bivariate: bool) -> float:
    q_star, s_star = _fp_at(lam, mu, theta, p, gamma, c, tag)
    if bivariate:
        v_qq, v_ss, v_qs = _closures_at(lam, mu, theta, p, gamma, c, tag)
    else:
        v_qq, v_ss, v_qs = q_star, 0.0, 0.0
    return delay_probability(q_star, s_star, v_qq, v_ss, v_qs)


def _solve_ol_quadratic(lam, mu, theta, p, gamma, z, var_slope, sigma0_sq, label) -> tuple[float, dict]:
    """Root of (mu*kappa*c - lam)/theta = z * sqrt(sigma0_sq + var_slope*c).

    Squaring yields mu^2 kappa^2 c^2 - (2 mu kappa lam + z^2 theta^2 var_slope) c
    + (lam^2 - z^2 theta^2 sigma0_sq) = 0; squaring can introduce a spurious
    root, so candidates are checked against the pre-squaring equation and a
    violating root is rejected (the larger consistent one wins).
    """
    kap = gamma / (gamma + p * mu)
    a = mu * mu * kap * kap
    b = -(2.0 * mu * kap * lam + z * z * theta * theta * var_slope)
    c0 = lam * lam - z * z * theta * theta * sigma0_sq
    disc = b * b - 4.0 * a * c0
    if disc < 0:
        raise InfeasibleError(
            f"{label}: overloaded staffing quadratic has negative discriminant {disc!r} "
            f"for target quantile z={z!r}"
        )
    sq = math.sqrt(disc)
    roots = sorted(((-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)))
    consistent = []
    for root in roots:
        if root <= 0:
            continue
        s2 = sigma0_sq + var_slope * root
        if s2 <= 0:
            continue
        lhs = (mu * kap * root - lam) / theta
        rhs = z * math.sqrt(s2)
        if abs(lhs - rhs) <= 1e-8 * (1.0 + abs(rhs)):
            consistent.append(root)
    if not consistent:
        raise InfeasibleError(
            f"{label}: neither quadratic root {roots} satisfies the pre-squaring "
            f"equation for z={z!r}; the target is unreachable under the overload model"
        )
    return max(consistent), {"discriminant": disc, "roots": roots}


def _answer(lam, mu, theta, p, gamma, c, tag, method, z, bivariate, extra) -> StaffingAnswer:
    boundary = _boundary(lam, mu, p, gamma)
    margin = c - boundary
    if tag is RegimeTag.OVERLOADED:
        consistent = margin <= 0
    else:
        consistent = margin >= 0
    c_int = max(_ceil_snap(c), 1)
    diagnostics = {
        "z": z,
        "boundary": boundary,
        "regime_consistent": consistent,
        "predicted_delay_at_c": _predicted_delay(lam, mu, theta, p, gamma, c, tag, bivariate),
        "predicted_delay_floor": _predicted_delay(lam, mu, theta, p, gamma, max(c_int - 1, 1), tag, bivariate),
        "predicted_delay_ceil": _predicted_delay(lam, mu, theta, p, gamma, c_int, tag, bivariate),
    }
    diagnostics.update(extra)
    return StaffingAnswer(c, c_int, method, tag, diagnostics)


def _staff_delay(lam, mu, theta, p, gamma, target, regime, bivariate) -> StaffingAnswer:
    _check_rates(lam, mu, theta, p, gamma)
    z = Phi_bar_inv(target.epsilon)
    method = Method.BIVARIATE_NORMAL if bivariate else Method.FLUID_DETERMINISTIC
    label = method.value
    boundary = _boundary(lam, mu, p, gamma)

    def solve_ul() -> tuple[float, dict]:
        spread = boundary if bivariate else lam / mu
        return boundary + z * math.sqrt(spread), {}

    def solve_ol() -> tuple[float, dict]:
        if bivariate:
            slope = _u_a(lam, mu, theta, p, gamma)
        else:
            # deterministic model: Var(Q - S) = q*(c) = lam/theta + kappa*(1 - mu/theta)*c
            kap = gamma / (gamma + p * mu)
            slope = kap * (1.0 - mu / theta)
        return _solve_ol_quadratic(lam, mu, theta, p, gamma, z, slope, lam / theta, label)

    if regime is not None:
        if regime is RegimeTag.OVERLOADED:
            c, extra = solve_ol()
            tag = RegimeTag.OVERLOADED
        else:
            c, extra = solve_ul()
            tag = RegimeTag.UNDERLOADED
        return _answer(lam, mu, theta, p, gamma, c, tag, method, z, bivariate, extra)

    c_ul, extra_ul = solve_ul()
    if c_ul >= boundary:
        return _answer(lam, mu, theta, p, gamma, c_ul, RegimeTag.UNDERLOADED, method, z, bivariate, extra_ul)
    try:
        c_ol, extra_ol = solve_ol()
    except InfeasibleError as exc:
        extra = {"ul_candidate": c_ul, "ol_error": str(exc)}
        return _answer(lam, mu, theta, p, gamma, c_ul, RegimeTag.UNDERLOADED, method, z, bivariate, extra)
    if c_ol <= boundary:
        return _answer(lam, mu, theta, p, gamma, c_ol, RegimeTag.OVERLOADED, method, z, bivariate, extra_ol)
    # neither branch self-consistent: report the conservative (larger) candidate
    extra = {"ul_candidate": c_ul, "ol_candidate": c_ol}
    extra.update(extra_ol)
    if c_ul >= c_ol:
        return _answer(lam, mu, theta, p, gamma, c_ul, RegimeTag.UNDERLOADED, method, z, bivariate, extra)
    return _answer(lam, mu, theta, p, gamma, c_ol, RegimeTag.OVERLOADED, method, z, bivariate, extra)


def staff_delay_deterministic(
    lam: float, mu: float, theta: float, p: float, gamma: float,
    target: DelayTarget, regime: RegimeTag | None = None,
) -> StaffingAnswer:
    """Delay staffing with deterministic servers: Q ~ N(q*, q*) against S = s*.

    Underloaded closed form: lam*p/gamma + lam/mu + sqrt(lam/mu) * z. The
    overloaded branch solves the corresponding quadratic.
    """
    return _staff_delay(lam, mu, theta, p, gamma, target, regime, bivariate=False)


def staff_delay_bivariate(
    lam: float, mu: float, theta: float, p: float, gamma: float,
    target: DelayTarget, regime: RegimeTag | None = None,
) -> StaffingAnswer:
    """Delay staffing with jointly normal (Q, S) and the regime moment closures.

    Underloaded closed form: lam*p/gamma + lam/mu + z * sqrt(lam/mu + lam*p/gamma).
    The overloaded branch solves the covariance-aware quadratic whose linear
    variance coefficient is the slope of Var(Q - S) in c.
    """
    return _staff_delay(lam, mu, theta, p, gamma, target, regime, bivariate=True)


def _u_a(lam, mu, theta, p, gamma) -> float:
    """Slope in c of the overload closure Var(Q - S) = lam/theta + u_a * c."""
    beta = gamma + p * mu
    ratio = (gamma + theta + p * mu - mu) / (theta + beta)
    return gamma * p * mu / (beta * beta) * (1.0 - 2.0 * ratio)


def alpha_of_c(lam: float, mu: float, theta: float, p: float, gamma: float, c: float) -> float:
    """Abandonment fraction at staffing c under the overload normal closures.

    alpha(c) = (theta/lam) * E[(Q-S)^+] with Q - S ~ N(m(c), sigma^2(c)),
    m(c) = lam/theta - (mu*kappa/theta) * c and sigma^2(c) = lam/theta + u_a * c.
    """
    kap = gamma / (gamma + p * mu)
    m = lam / theta - mu * kap * c / theta
    u_a = _u_a(lam, mu, theta, p, gamma)
    s2 = lam / theta + u_a * c
    if not s2 > 0:
        raise VarianceClosureError(c, u_a)
    return theta / lam * expected_positive_part(NormalParams(m, math.sqrt(s2)))


def _alpha_deriv(lam, mu, theta, p, gamma, c) -> float:
    kap = gamma / (gamma + p * mu)
    u_a = _u_a(lam, mu, theta, p, gamma)
    m = lam / theta - mu * kap * c / theta
    sigma = math.sqrt(lam / theta + u_a * c)
    h = m / sigma
    return theta / lam * (Phi(h) * (-mu * kap / theta) + phi(h) * u_a / (2.0 * sigma))


def staff_abandon_fluid_bound(
    lam: float, mu: float, theta: float, p: float, gamma: float, target: AbandonTarget
) -> StaffingAnswer:
    """Fluid feasibility lower bound: c = lam*(gamma + p*mu)*(1 - eps)/(gamma*mu)."""
    _check_rates(lam, mu, theta, p, gamma)
    c = lam * (gamma + p * mu) * (1.0 - target.epsilon) / (gamma * mu)
    boundary = _boundary(lam, mu, p, gamma)
    diagnostics = {
        "boundary": boundary,
        "regime_consistent": c <= boundary,
        "fluid_alpha_at_c": 1.0 - gamma * mu * c / (lam * (gamma + p * mu)),
        "is_lower_bound": True,
    }
    return StaffingAnswer(c, max(_ceil_snap(c), 1), Method.ABANDON_FLUID_BOUND,
                          RegimeTag.OVERLOADED, diagnostics)


def staff_abandon_implicit(
    lam: float, mu: float, theta: float, p: float, gamma: float,
    target: AbandonTarget, c_max: float = 1e8, tol: float = 1e-8,
) -> StaffingAnswer:
    """Unique root of alpha(c) = eps: bracket from the fluid bound, then
    bisection with guarded Newton steps until |alpha(c) - eps| < tol."""
    _check_rates(lam, mu, theta, p, gamma)
    eps = target.epsilon
    u_a = _u_a(lam, mu, theta, p, gamma)
    c_cap = math.inf if u_a >= 0 else -(lam / theta) / u_a * (1.0 - 1e-12)

    lo = lam * (gamma + p * mu) * (1.0 - eps) / (gamma * mu)
    if lo >= c_cap:
        raise InfeasibleError(
            f"the fluid bound {lo!r} already exceeds the variance-closure limit "
            f"{c_cap!r} (u_a={u_a!r}); alpha(c) is not defined on the bracket"
        )
    # alpha(lo) >= eps analytically; back off only if float noise says otherwise
    shrink = 0
    while alpha_of_c(lam, mu, theta, p, gamma, lo) < eps and shrink < 60:
        lo *= 0.5
        shrink += 1
    fluid_bound = lo if shrink == 0 else lo * 2.0**shrink

    hi = lo
    expansions = 0
    while alpha_of_c(lam, mu, theta, p, gamma, hi) > eps:
        hi_next = min(2.0 * hi, c_cap, c_max)
        if hi_next <= hi:
            limit = "c_max" if hi >= c_max else "the variance-closure limit"
            raise InfeasibleError(
                f"alpha({hi!r}) = {alpha_of_c(lam, mu, theta, p, gamma, hi)!r} is still above "
                f"{eps!r} at {limit}; the target is unreachable under the overload closures"
            )
        lo = hi
        hi = hi_next
        expansions += 1

    c = 0.5 * (lo + hi)
    iterations = 0
    while True:
        value = alpha_of_c(lam, mu, theta, p, gamma, c) - eps
        iterations += 1
        if abs(value) < tol or (hi - lo) < 1e-13 * max(hi, 1.0):
            break
        if value > 0:
            lo = c
        else:
            hi = c
        deriv = _alpha_deriv(lam, mu, theta, p, gamma, c)
        c_newton = c - value / deriv if deriv < 0 else math.nan
        if lo < c_newton < hi:
            c = c_newton
        else:
            c = 0.5 * (lo + hi)
        if iterations > 200:
            break

    boundary = _boundary(lam, mu, p, gamma)
    consistent = c <= boundary
    c_int = max(_ceil_snap(c), 1)
    diagnostics = {
        "boundary": boundary,
        "regime_consistent": consistent,
        "alpha_at_c": alpha_of_c(lam, mu, theta, p, gamma, c),
        "alpha_floor": alpha_of_c(lam, mu, theta, p, gamma, max(c_int - 1, 1)),
        "alpha_ceil": alpha_of_c(lam, mu, theta, p, gamma, c_int),
        "fluid_bound": fluid_bound,
        "iterations": iterations,
        "bracket_expansions": expansions,
        "bracket": (lo, hi),
    }
    if not consistent:
        diagnostics["note"] = (
            "root lies in the underloaded region where fluid abandonment is zero; "
            "the abandonment constraint does not bind there and delay staffing governs"
        )
    return StaffingAnswer(c, c_int, Method.ABANDON_IMPLICIT, RegimeTag.OVERLOADED, diagnostics)


def excess_moments(q_star: float, s_star: float, v_qq: float, v_ss: float, v_qs: float) -> ExcessMoments:
    """Mean and variance of (Q-S)^+ and (S-Q)^+ under the joint-normal model."""
    var = v_qq + v_ss - 2.0 * v_qs
    if not var > 0:
        raise DegenerateVarianceError(
            f"Var(Q - S) = v_qq + v_ss - 2*v_qs = {var!r} must be > 0"
        )
    sigma = math.sqrt(var)
    m = q_star - s_star
    pos = positive_part_moments(NormalParams(m, sigma))
    neg = positive_part_moments(NormalParams(-m, sigma))
    return ExcessMoments(pos.mean, pos.variance, neg.mean, neg.variance)


def staff_empirical(
    lam: float, mu: float, theta: float, p: float, gamma: float,
    metric: str, epsilon: float, *,
    customers: int = 100_000, reps: int = 1, seed: int = 0, warmup: float = 0.2,
    jobs: int = 1, c_min: int = 1, c_max: int | None = None, max_evals: int = 60,
) -> StaffingAnswer:
    """Smallest integer c whose simulated metric estimate is <= epsilon.

    Exponential bracketing plus integer bisection, exploiting that both metrics
    are nonincreasing in c. Every candidate c reuses the same seed (common
    random numbers), so the search is deterministic and the comparison across
    candidates is smooth. Budget: max_evals distinct candidate evaluations;
    on exhaustion a partial answer with the best-known bracket is returned.
    """
    _check_rates(lam, mu, theta, p, gamma)
    if metric not in ("delay", "abandonment"):
        raise ValueError(f"metric must be 'delay' or 'abandonment', got {metric!r}")
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    key = "delay_probability" if metric == "delay" else "abandonment_fraction"

    if metric == "delay":
        guess = staff_delay_bivariate(lam, mu, theta, p, gamma, DelayTarget(epsilon)).c_int
    else:
        guess = staff_abandon_implicit(lam, mu, theta, p, gamma, AbandonTarget(epsilon)).c_int
    c0 = max(c_min, guess)
    if c_max is None:
        c_max = int(4 * max(c0, _boundary(lam, mu, p, gamma), 1)) + 10

    evals: dict[int, MetricSummary] = {}

    def estimate(ci: int) -> MetricSummary:
        if ci not in evals:
            params = validate(lam, mu, theta, p, gamma, ci)
            cfg = SimConfig(params=params, n_customers=customers, warmup=warmup, seed=seed)
            evals[ci] = replicate(cfg, reps, jobs=jobs).metrics[key]
        return evals[ci]

    def good(ci: int) -> bool:
        return estimate(ci).mean <= epsilon

    def partial(lo_b, hi_b) -> StaffingAnswer:
        c_best = hi_b if hi_b is not None else c_max
        params = validate(lam, mu, theta, p, gamma, c_best)
        diagnostics = {
            "budget_exhausted": True,
            "bracket": (lo_b, hi_b),
            "evaluations": {ci: evals[ci].mean for ci in sorted(evals)},
            "metric": metric,
            "epsilon": epsilon,
        }
        return StaffingAnswer(float(c_best), c_best, Method.EMPIRICAL_SIM,
                              classify(params).tag, diagnostics)

    lo: int | None = None
    hi: int | None = None
    if good(c0):
        hi = c0
        step_size = 1
        cur = c0
        while True:
            cand = cur - step_size
            if cand < c_min:
                lo = c_min - 1 if good(c_min) else c_min  # c_min good means answer c_min
                if lo == c_min - 1:
                    hi = c_min
                break
            if len(evals) >= max_evals and cand not in evals:
                return partial(lo, hi)
            if good(cand):
                hi = cand
                cur = cand
                step_size *= 2
            else:
                lo = cand
                break
    else:
        lo = c0
        step_size = 1
        cur = c0
        while True:
            cand = cur + step_size
            if cand > c_max:
                if good(c_max):
                    hi = c_max
                    break
                return partial(lo, None)
            if len(evals) >= max_evals and cand not in evals:
                return partial(lo, hi)
            if good(cand):
                hi = cand
                break
            lo = cand
            cur = cand
            step_size *= 2

    while hi - lo > 1:
        mid = (lo + hi) // 2
        if len(evals) >= max_evals and mid not in evals:
            return partial(lo, hi)
        if good(mid):
            hi = mid
        else:
            lo = mid

    best = estimate(hi)
    params = validate(lam, mu, theta, p, gamma, hi)
    diagnostics = {
        "budget_exhausted": False,
        "estimate_mean": best.mean,
        "estimate_std": best.std,
        "estimate_halfwidth": best.halfwidth,
        "bracket": (lo, hi),
        "n_evaluations": len(evals),
        "evaluations": {ci: evals[ci].mean for ci in sorted(evals)},
        "metric": metric,
        "epsilon": epsilon,
        "customers": customers,
        "reps": reps,
        "seed": seed,
    }
    return StaffingAnswer(float(hi), hi, Method.EMPIRICAL_SIM, classify(params).tag, diagnostics)
