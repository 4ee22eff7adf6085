"""Mean-field dynamics: drift field, fixed-step RK4 integration, closed-form steady states."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ModelParams, Regime, RegimeTag, classify


class IntegrationError(RuntimeError):
    """The integrator produced a non-finite state."""

    def __init__(self, t: float, q: float, s: float):
        super().__init__(f"non-finite fluid state (q={q!r}, s={s!r}) at t={t!r}")
        self.t = t


@dataclass(frozen=True)
class FluidState:
    q: float
    s: float


@dataclass(frozen=True)
class FixedPoint:
    q_star: float
    s_star: float
    regime: Regime


@dataclass(frozen=True)
class FluidTrajectory:
    """States sampled on a uniform time grid."""

    times: np.ndarray
    q: np.ndarray
    s: np.ndarray
    params: ModelParams

    def terminal(self) -> FluidState:
        return FluidState(float(self.q[-1]), float(self.s[-1]))


def drift(state: FluidState, params: ModelParams) -> tuple[float, float]:
    """Time derivatives (dq/dt, ds/dt) of the mean-field equations."""
    busy = state.q if state.q < state.s else state.s
    excess = state.q - state.s if state.q > state.s else 0.0
    dq = params.lam - params.mu * busy - params.theta * excess
    ds = params.gamma * (params.c - state.s) - params.p * params.mu * busy
    return dq, ds


def default_step(params: ModelParams) -> float:
    """Step keeping RK4 far inside its stability region for the fastest rate."""
    return 0.01 / max(params.mu, params.gamma, params.theta)


def integrate(
    params: ModelParams,
    init: FluidState,
    horizon: float,
    step: float | None = None,
) -> FluidTrajectory:
    """Classical RK4 on the drift with a fixed step.

    The step is rounded so that an integer number of steps lands exactly on the
    horizon; the kink at q = s is integrated through without event detection.
    """
    if step is None:
        step = default_step(params)
    if not step > 0:
        raise ValueError(f"step must be > 0, got {step!r}")
    if not horizon >= step:
        raise ValueError(f"horizon must be >= step, got horizon={horizon!r} step={step!r}")
    n = max(1, round(horizon / step))
    h = horizon / n

    lam, mu, theta, p, gamma, c = (
        params.lam, params.mu, params.theta, params.p, params.gamma, params.c,
    )

    def f(q, s):
        busy = q if q < s else s
        excess = q - s if q > s else 0.0
        return lam - mu * busy - theta * excess, gamma * (c - s) - p * mu * busy

    times = np.linspace(0.0, horizon, n + 1)
    qs = np.empty(n + 1)
    ss = np.empty(n + 1)
    q, s = float(init.q), float(init.s)
    qs[0], ss[0] = q, s
    half = 0.5 * h
    sixth = h / 6.0
    for i in range(1, n + 1):
        k1q, k1s = f(q, s)
        k2q, k2s = f(q + half * k1q, s + half * k1s)
        k3q, k3s = f(q + half * k2q, s + half * k2s)
        k4q, k4s = f(q + h * k3q, s + h * k3s)
        q += sixth * (k1q + 2.0 * (k2q + k3q) + k4q)
        s += sixth * (k1s + 2.0 * (k2s + k3s) + k4s)
        if not (math.isfinite(q) and math.isfinite(s)):
            raise IntegrationError(float(times[i]), q, s)
        qs[i], ss[i] = q, s
    return FluidTrajectory(times, qs, ss, params)


def fixed_point(params: ModelParams) -> FixedPoint:
    """Closed-form steady state; the critical boundary uses the underloaded forms."""
    regime = classify(params)
    if regime.tag is RegimeTag.OVERLOADED:
        s_star = params.gamma * params.c / (params.gamma + params.p * params.mu)
        q_star = (params.lam - params.mu * s_star) / params.theta + s_star
    else:
        q_star = params.lam / params.mu
        s_star = params.c - params.lam * params.p / params.gamma
    return FixedPoint(q_star, s_star, regime)
