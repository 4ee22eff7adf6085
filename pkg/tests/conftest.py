"""Shared helpers: random parameter draws per regime."""

from __future__ import annotations

import numpy as np
import pytest

from erlang_sstar.model import ModelParams, validate


def draw_params(rng: np.random.Generator, regime: str) -> ModelParams:
    """A random parameter set landing in the requested regime.

    Rates stay within [0.5, 2.5] so fixed-step integration budgets are bounded;
    c is placed a comfortable factor away from the regime boundary.
    """
    lam = rng.uniform(20.0, 200.0)
    mu = rng.uniform(0.5, 2.5)
    theta = rng.uniform(0.5, 2.5)
    p = rng.uniform(0.0, 1.0)
    gamma = rng.uniform(0.5, 2.5)
    load = lam / mu + lam * p / gamma
    if regime == "UL":
        c = load * rng.uniform(1.15, 1.8)
    elif regime == "OL":
        c = load * rng.uniform(0.35, 0.85)
    else:
        c = load
    return validate(lam, mu, theta, p, gamma, c)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
