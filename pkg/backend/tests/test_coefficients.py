# -*- coding: utf-8 -*-
import math

import numpy as np
import pytest

from target_zone.coefficients import (
    Affine, CoefficientError, Constant, Scaled, Sinusoidal, coefficient_to_spec, parse_coefficient,
)


def test_number_is_constant():
    coefficient = parse_coefficient(0.5)
    assert coefficient == Constant(0.5)
    np.testing.assert_array_equal(coefficient(np.zeros(3), np.arange(3.0)), [0.5, 0.5, 0.5])


def test_infinite_constant_allowed():
    assert math.isinf(parse_coefficient(float('inf'))(0.0, 0.0))


def test_affine_defaults_to_lambda_bounds():
    coefficient = parse_coefficient({'family': 'affine', 'intercept': 0.0, 'slope': 2.0}, Lambda=1.0)
    assert coefficient.lower == -1.0 and coefficient.upper == 1.0
    np.testing.assert_allclose(coefficient(0.0, np.array([-3.0, 0.25, 3.0])), [-1.0, 0.5, 1.0])


def test_affine_origin_shifts_argument():
    coefficient = Affine(intercept=0.0, slope=1.0, origin=2.0, lower=0.0, upper=1.0)
    np.testing.assert_allclose(coefficient(0.0, np.array([1.0, 2.5, 9.0])), [0.0, 0.5, 1.0])


def test_sinusoidal_depends_on_time_only():
    coefficient = parse_coefficient({'family': 'sinusoidal', 'mean': 1.0, 'amplitude': 0.5, 'frequency': 1.0})
    assert coefficient(0.25, 7.0) == pytest.approx(1.5)
    assert coefficient(0.75, -7.0) == pytest.approx(0.5)


def test_scaled_multiplies_base():
    coefficient = parse_coefficient({'family': 'scaled', 'factor': 2.0, 'base': 0.75})
    assert isinstance(coefficient, Scaled)
    assert coefficient(0.0, 0.0) == pytest.approx(1.5)


@pytest.mark.parametrize('raw', [
    True,
    "fast",
    {'family': 'cubic'},
    {'family': 'sinusoidal'},
    {'family': 'affine', 'slope': 'steep'},
])
def test_invalid_coefficients_raise(raw):
    with pytest.raises(CoefficientError):
        parse_coefficient(raw, Lambda=1.0)


@pytest.mark.parametrize('coefficient', [
    Constant(0.3),
    Affine(0.1, -0.5, origin=1.0, lower=-2.0, upper=2.0),
    Sinusoidal(1.0, 0.2, frequency=3.0, phase=0.5),
    Scaled(Affine(0.0, 1.0, lower=0.0, upper=1.0), 0.5),
])
def test_spec_round_trip(coefficient):
    assert parse_coefficient(coefficient_to_spec(coefficient), Lambda=2.0) == coefficient


def test_plain_function_is_not_serializable():
    with pytest.raises(CoefficientError):
        coefficient_to_spec(lambda t, y: 0.0)
