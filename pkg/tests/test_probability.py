import math

import mpmath
import numpy as np
import pytest

from erlang_sstar.probability import (
    NormalParams,
    Phi,
    Phi_bar,
    Phi_bar_inv,
    expected_positive_part,
    phi,
    positive_part_moments,
)


def survival_quadrature(x: float) -> float:
    """Independent oracle: integrate the Gaussian density over [x, inf)."""
    with mpmath.workdps(50):
        value = mpmath.quad(
            lambda t: mpmath.exp(-t * t / 2) / mpmath.sqrt(2 * mpmath.pi), [x, 50]
        )
        return float(value)


def survival_bisect_inverse(eps: float) -> float:
    """Independent oracle: invert Phi_bar by bisection."""
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if Phi_bar(mid) > eps:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_pdf_at_zero():
    assert phi(0.0) == pytest.approx(1.0 / math.sqrt(2 * math.pi), abs=1e-15)


def test_cdf_at_zero():
    assert Phi(0.0) == 0.5


def test_survival_matches_quadrature_oracle():
    # frozen from the quadrature oracle: Phi_bar(1.2816) = 0.09997...
    assert Phi_bar(1.2816) == pytest.approx(0.100, abs=1e-4)
    for x in (-3.0, -1.0, 0.3, 1.2816, 2.5, 5.0, 8.0):
        assert Phi_bar(x) == pytest.approx(survival_quadrature(x), rel=1e-13, abs=1e-300)


def test_cdf_survival_complement():
    for x in np.linspace(-8.0, 8.0, 161):
        assert abs(Phi(x) + Phi_bar(x) - 1.0) < 1e-14


def test_quantile_reference_points():
    assert Phi_bar_inv(0.5) == pytest.approx(0.0, abs=1e-15)
    assert Phi_bar_inv(0.05) == pytest.approx(1.6449, abs=1e-4)
    assert Phi_bar_inv(0.10) == pytest.approx(1.2816, abs=1e-4)
    for eps in (1e-6, 1e-3, 0.2, 0.8, 1 - 1e-6):
        assert Phi_bar_inv(eps) == pytest.approx(survival_bisect_inverse(eps), abs=1e-9)


def test_quantile_round_trip():
    for eps in (1e-4, 0.01, 0.05, 0.1, 0.5, 0.9):
        assert abs(Phi_bar(Phi_bar_inv(eps)) - eps) < 1e-9


def test_quantile_domain_errors():
    for eps in (0.0, 1.0, -0.1, 1.1, math.nan):
        with pytest.raises(ValueError):
            Phi_bar_inv(eps)


def test_normal_params_requires_positive_sigma():
    with pytest.raises(ValueError):
        NormalParams(0.0, 0.0)
    with pytest.raises(ValueError):
        NormalParams(0.0, -1.0)


def test_expected_positive_part_centered():
    assert expected_positive_part(NormalParams(0.0, 1.0)) == pytest.approx(0.39894, abs=1e-5)


def test_expected_positive_part_degenerate_positive_mean():
    assert expected_positive_part(NormalParams(3.0, 1e-9)) == pytest.approx(3.0, rel=1e-12)


def test_expected_positive_part_monte_carlo_oracle():
    rng = np.random.default_rng(7)
    samples = np.maximum(rng.normal(-1.0, 2.0, size=1_000_000), 0.0)
    se = samples.std(ddof=1) / math.sqrt(len(samples))
    assert abs(expected_positive_part(NormalParams(-1.0, 2.0)) - samples.mean()) < 3 * se


def test_positive_part_moments_centered():
    m = positive_part_moments(NormalParams(0.0, 1.0))
    assert m.mean == pytest.approx(0.39894, abs=1e-5)
    assert m.second == pytest.approx(0.5, abs=1e-12)
    assert m.variance == pytest.approx(0.5 - 1.0 / (2 * math.pi), abs=1e-12)


def test_positive_part_moments_all_positive_limit():
    # when the mass is essentially all positive, X+ = X and the variance is sigma^2
    m = positive_part_moments(NormalParams(50.0, 2.0))
    assert m.variance == pytest.approx(4.0, rel=1e-9)


def test_positive_part_moments_deep_negative_mean():
    m = positive_part_moments(NormalParams(-5.0, 1.0))
    assert m.mean < 1e-5
    assert m.second < 1e-5
    assert m.variance < 1e-5


def test_positive_part_identity_and_nonnegative_variance(rng):
    for _ in range(200):
        mean = rng.uniform(-10.0, 10.0)
        sigma = rng.uniform(0.05, 5.0)
        pos = expected_positive_part(NormalParams(mean, sigma))
        neg = expected_positive_part(NormalParams(-mean, sigma))
        assert pos - neg == pytest.approx(mean, abs=1e-12 * max(1.0, abs(mean)))
        assert positive_part_moments(NormalParams(mean, sigma)).variance >= 0.0


def test_positive_part_moments_monte_carlo_oracle(rng):
    for _ in range(5):
        mean = rng.uniform(-3.0, 3.0)
        sigma = rng.uniform(0.3, 3.0)
        samples = np.maximum(rng.normal(mean, sigma, size=200_000), 0.0)
        got = positive_part_moments(NormalParams(mean, sigma))
        se_mean = samples.std(ddof=1) / math.sqrt(len(samples))
        assert abs(got.mean - samples.mean()) < 3 * se_mean
        sq = samples**2
        se_sq = sq.std(ddof=1) / math.sqrt(len(sq))
        assert abs(got.second - sq.mean()) < 3 * se_sq
