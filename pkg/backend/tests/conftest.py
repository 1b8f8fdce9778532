# -*- coding: utf-8 -*-
import math

import numpy as np
import pytest

from target_zone.coefficients import Constant
from target_zone.fixtures import oracle_params, upper_oracle_params
from target_zone.hjb_solver import Grid
from target_zone.model import Mark, ModelParams


def oracle_value(t, M, T=1.0):
    """Nghiệm dạng đóng của mô hình oracle (lambda = 0, gamma = 0, mu = 1, q = 2)"""
    inv_M = 0.0 if math.isinf(M) else 1.0 / M
    return 1.0 / ((1.0 + inv_M) * np.exp(T - np.asarray(t, dtype=float)) - 1.0)


def constant_params(**overrides) -> ModelParams:
    """beta = sigma = lam = 0, sigma_bar = eta = 1, q = 2, T = 1, không có mark"""
    values = dict(
        q=2.0, T=1.0, a=0.0,
        beta=Constant(0.0), sigma=Constant(0.0), sigma_bar=Constant(1.0),
        eta=Constant(1.0), lam=Constant(0.0), marks=(),
        Lambda=1.0, kappa=1.0, kappa0=1.0,
    )
    values.update(overrides)
    return ModelParams(**values)


@pytest.fixture
def oracle():
    return oracle_params()


@pytest.fixture
def upper_oracle():
    return upper_oracle_params()


@pytest.fixture
def oracle_grid(oracle):
    return Grid.build(oracle, 6.0, 61, 100, refine_count=160)


@pytest.fixture
def small_grid(oracle):
    return Grid.build(oracle, 4.0, 21, 40, refine_count=80)


@pytest.fixture
def frozen_params():
    """Không nhiễu, không drift: y đứng yên tại a"""
    return constant_params(sigma_bar=Constant(0.0), kappa=0.0)


@pytest.fixture
def blind_oracle(oracle):
    """Oracle với gamma = +inf: không dùng dark pool, tồn kho không nhảy"""
    return oracle.replace(marks=(Mark(1.0, 1.0, Constant(math.inf)),))
