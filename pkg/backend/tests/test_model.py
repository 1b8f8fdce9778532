# -*- coding: utf-8 -*-
import math

import numpy as np
import pytest

from conftest import constant_params
from target_zone.coefficients import Constant
from target_zone.model import (
    Mark, ModelError, alpha, decay_coefficient, default_audit_grid, execution_fraction,
    hamiltonian_zeroth, slippage_share, theta, theta_audit, validate,
)


def test_valid_constant_model_has_no_violations():
    params = constant_params(lam=Constant(1.0))
    assert validate(params) == []


def test_superparabolicity_flagged_at_every_sample():
    params = constant_params(lam=Constant(1.0), sigma_bar=Constant(0.0))
    times, ys = default_audit_grid(params)
    violations = [v for v in validate(params) if v.name == "superparabolicity"]
    assert len(violations) == times.size * ys.size


def test_eta_floor_flagged():
    params = constant_params(eta=Constant(0.5))
    assert "eta floor" in {v.name for v in validate(params)}


def test_negative_lambda_and_gamma_flagged():
    params = constant_params(lam=Constant(-0.1), marks=(Mark(1.0, 1.0, Constant(-1.0)),))
    names = {v.name for v in validate(params)}
    assert {"lam sign", "gamma range"} <= names


def test_nonpositive_mark_weight_flagged():
    params = constant_params(marks=(Mark(1.0, 0.0, Constant(1.0)),))
    assert "mark weight" in {v.name for v in validate(params)}


def test_exponent_must_exceed_one():
    with pytest.raises(ModelError):
        validate(constant_params(q=1.0))


def test_violation_message_names_sample():
    params = constant_params(eta=Constant(0.5))
    message = str(validate(params)[0])
    assert "eta floor" in message and "t=" in message


@pytest.mark.parametrize('sigma, sigma_bar, expected', [
    (0.0, 1.0, 0.5),
    (1.0, 1.0, 1.0),
    (0.3, 0.4, 0.125),
])
def test_alpha(sigma, sigma_bar, expected):
    params = constant_params(sigma=Constant(sigma), sigma_bar=Constant(sigma_bar))
    assert float(alpha(params, 0.0, 0.0)) == pytest.approx(expected)


@pytest.mark.parametrize('distance, expected', [(0.0, 1.0), (1.0, 0.5), (3.0, 0.1)])
def test_theta(distance, expected):
    params = constant_params(a=2.0)
    assert float(theta(params, 2.0 + distance)) == pytest.approx(expected)


def test_theta_audit_matches_known_suprema():
    params = constant_params()
    audit = theta_audit(params, np.linspace(0.0, 10.0, 100001))
    assert audit['sup_d_theta'] == pytest.approx(3.0 * math.sqrt(3.0) / 8.0, rel=1e-6)
    assert audit['sup_d2_theta'] == pytest.approx(2.0)
    assert audit['sup_theta_times_distance'] == pytest.approx(0.5, rel=1e-6)


def test_hamiltonian_at_zero_is_lambda():
    params = constant_params(lam=Constant(0.7), marks=(Mark(1.0, 1.0, Constant(1.0)),))
    assert float(hamiltonian_zeroth(params, 0.3, 0.0, 0.0)) == pytest.approx(0.7)


def test_hamiltonian_with_one_dark_pool():
    params = constant_params(lam=Constant(0.5), marks=(Mark(1.0, 1.0, Constant(1.0)),))
    assert float(hamiltonian_zeroth(params, 0.0, 0.0, 1.0)) == pytest.approx(-1.0)


def test_hamiltonian_without_dark_pool_keeps_power_term():
    params = constant_params(marks=(Mark(1.0, 0.4, Constant(math.inf)), Mark(2.0, 0.6, Constant(math.inf))))
    assert float(hamiltonian_zeroth(params, 0.0, 0.0, 2.0)) == pytest.approx(-4.0)


def test_hamiltonian_rejects_negative_value():
    with pytest.raises(ModelError):
        hamiltonian_zeroth(constant_params(), 0.0, 0.0, -1.0)


def test_decay_coefficient_is_nonnegative():
    params = constant_params(marks=(Mark(1.0, 0.5, Constant(0.0)), Mark(2.0, 0.5, Constant(3.0))))
    u = np.linspace(0.0, 50.0, 101)
    assert np.all(decay_coefficient(params, 0.0, 0.0, u) >= 0.0)


def test_slippage_share_limits():
    params = constant_params(marks=(Mark(1.0, 1.0, Constant(0.0)), Mark(2.0, 1.0, Constant(math.inf)),
                                    Mark(3.0, 1.0, Constant(2.0))))
    share = slippage_share(params, 0.0, 0.0, 2.0)
    np.testing.assert_allclose(share, [0.0, 1.0, 0.5])
    fraction = execution_fraction(params, 0.0, 0.0, 0.0)
    np.testing.assert_allclose(fraction, [1.0, 0.0, 0.0])


def test_without_dark_pool_sets_infinite_slippage():
    params = constant_params(marks=(Mark(1.0, 1.0, Constant(0.2)),))
    blind = params.without_dark_pool()
    assert blind.mu_total == params.mu_total
    assert math.isinf(float(blind.gamma(0.0, 0.0, 0)))
