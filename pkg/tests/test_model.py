import numpy as np
import pytest

from erlang_sstar.model import (
    Kappa,
    ParamError,
    RegimeTag,
    classify,
    kappa,
    validate,
)

from conftest import draw_params


def test_validate_accepts_reference_parameters():
    params = validate(100, 5, 1, 0.1, 0.5, 100)
    assert params.lam == 100.0
    assert params.offered_load == pytest.approx(40.0)


def test_validate_rejects_p_outside_unit_interval():
    with pytest.raises(ParamError, match="p must lie in"):
        validate(1, 1, 1, 1.5, 1, 1)


def test_validate_rejects_zero_arrival_rate():
    with pytest.raises(ParamError, match="lam must be"):
        validate(0, 1, 1, 0, 1, 1)


def test_validate_reports_every_offending_field():
    with pytest.raises(ParamError) as err:
        validate(-1, 0, 1, 2.0, 1, -3)
    message = str(err.value)
    for field in ("lam", "mu", "p", "c"):
        assert field in message


def test_validate_rejects_overflowing_offered_load():
    with pytest.raises(ParamError, match="overflow"):
        validate(1e308, 1e-308, 1, 0, 1, 1)


def test_classify_underloaded():
    regime = classify(validate(100, 5, 1, 0.1, 0.5, 100))
    assert regime.tag is RegimeTag.UNDERLOADED
    assert regime.load_margin == pytest.approx(60.0)


def test_classify_overloaded():
    regime = classify(validate(100, 1, 1, 0.5, 1, 100))
    assert regime.tag is RegimeTag.OVERLOADED
    assert regime.load_margin == pytest.approx(-50.0)


def test_classify_critical_boundary_is_exact():
    regime = classify(validate(100, 1, 1, 0.5, 1, 150))
    assert regime.tag is RegimeTag.CRITICAL
    assert regime.load_margin == 0.0


def test_classify_is_scale_consistent(rng):
    for _ in range(100):
        params = draw_params(rng, rng.choice(["UL", "OL"]))
        n = rng.uniform(0.1, 10.0)
        scaled = validate(params.lam * n, params.mu, params.theta, params.p,
                          params.gamma, params.c * n)
        assert classify(scaled).tag is classify(params).tag


def test_kappa_reference_values():
    assert kappa(validate(1, 1, 1, 0.5, 1, 1)).value == pytest.approx(1 / 1.5)
    assert kappa(validate(1, 1, 1, 0.0, 1, 1)) == Kappa(1.0)
    assert kappa(validate(1, 1, 1, 0.5, 10, 1)).value == pytest.approx(10 / 10.5, rel=1e-6)


def test_kappa_monotonicity(rng):
    for _ in range(50):
        mu = rng.uniform(0.2, 5.0)
        gamma = rng.uniform(0.2, 5.0)
        p = rng.uniform(0.05, 0.95)
        base = kappa(validate(1, mu, 1, p, gamma, 1)).value
        assert kappa(validate(1, mu, 1, min(p * 1.1, 1.0), gamma, 1)).value <= base
        assert kappa(validate(1, mu * 1.1, 1, p, gamma, 1)).value <= base
        assert kappa(validate(1, mu, 1, p, gamma * 1.1, 1)).value >= base
