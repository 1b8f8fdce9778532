#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Fixtures: catalog các bộ tham số có nghiệm dạng đóng hoặc tính chất đã biết,
dùng chung cho property suites, lệnh verify và test.
"""

import math
import logging
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Tuple

from .coefficients import Affine, Constant, Sinusoidal
from .hjb_solver import Grid
from .model import Mark, ModelError, ModelParams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Fixture:
    """Bộ tham số có tên kèm lưới, thang M và điểm chạy mặc định"""
    name: str
    params: ModelParams
    description: str = ""
    y_span: float = 6.0
    n_space: int = 61
    n_time: int = 100
    refine_count: int = 160
    refine_ratio: float = 0.95
    M_schedule: Tuple[float, ...] = (1.0, 10.0, 100.0, 1000.0)
    t_cut: float = 0.9
    x0: float = 1.0
    y0: Optional[float] = None

    @property
    def start(self) -> float:
        return self.params.a if self.y0 is None else self.y0

    def grid(self) -> Grid:
        return Grid.build(self.params, self.params.a + self.y_span, self.n_space, self.n_time,
                          self.refine_count, self.refine_ratio)

    def replace(self, **changes) -> 'Fixture':
        return replace(self, **changes)


def oracle_params() -> ModelParams:
    """lambda = 0, eta = kappa0 = 1, gamma = 0 trên một mark w = 1, q = 2, T = 1: u(t) = [(1 + 1/M) e^{T-t} - 1]^{-1}"""
    return ModelParams(
        q=2.0, T=1.0, a=0.0,
        beta=Constant(0.0), sigma=Constant(0.0), sigma_bar=Constant(1.0),
        eta=Constant(1.0), lam=Constant(0.0),
        marks=(Mark(1.0, 1.0, Constant(0.0)),),
        Lambda=1.0, kappa=1.0, kappa0=1.0,
    )


def upper_oracle_params() -> ModelParams:
    # lambda = eta = Lambda, gamma = inf: nghiệm trùng Gamma^M
    return oracle_params().replace(lam=Constant(1.0), marks=(Mark(1.0, 1.0, Constant(math.inf)),))


def y_dependent_lambda_params() -> ModelParams:
    return oracle_params().replace(lam=Affine(0.0, 1.0, origin=0.0, lower=0.0, upper=1.0))


def dark_pool_params() -> ModelParams:
    """Hai mark với gamma hữu hạn, eta dao động theo t, drift hồi quy về barrier"""
    return ModelParams(
        q=2.0, T=1.0, a=0.0,
        beta=Affine(0.0, -0.5, origin=0.0, lower=-2.0, upper=2.0),
        sigma=Constant(0.3), sigma_bar=Constant(0.8),
        eta=Sinusoidal(1.0, 0.5, frequency=1.0), lam=Constant(0.5),
        marks=(Mark(1.0, 0.6, Constant(0.2)), Mark(2.0, 0.4, Constant(1.0))),
        Lambda=2.0, kappa=0.5, kappa0=0.5,
    )


def broken_params() -> ModelParams:
    # sigma_bar = 0 vi phạm superparabolicity
    return oracle_params().replace(sigma_bar=Constant(0.0))


FIXTURE_BUILDERS: Dict[str, Tuple[Callable[[], ModelParams], str]] = {
    'oracle': (oracle_params, "nghiệm dạng đóng của bao dưới"),
    'upper_oracle': (upper_oracle_params, "nghiệm trùng ODE Gamma^M"),
    'y_dependent_lambda': (y_dependent_lambda_params, "lambda(y) = clip(y - a, 0, 1)"),
    'dark_pool': (dark_pool_params, "dark pool với gamma hữu hạn"),
    'broken': (broken_params, "sigma_bar = 0 (validate phải thất bại)"),
}

ORACLE_CATALOG = ('oracle', 'upper_oracle', 'y_dependent_lambda')

# Singleton catalog
_catalog_instance: Optional[Dict[str, Fixture]] = None


def get_available_fixtures() -> List[str]:
    """Danh sách tên fixture có sẵn"""
    return list(FIXTURE_BUILDERS.keys())


def get_fixture_catalog() -> Dict[str, Fixture]:
    """
    Lấy singleton catalog (tên -> Fixture)

    Returns:
        Bản sao dict; các Fixture là bất biến
    """
    global _catalog_instance

    if _catalog_instance is None:
        _catalog_instance = {
            name: Fixture(name=name, params=builder(), description=description)
            for name, (builder, description) in FIXTURE_BUILDERS.items()
        }
        logger.debug(f"Khởi tạo catalog fixture: {list(_catalog_instance)}")

    return dict(_catalog_instance)


def get_fixture(name: str) -> Fixture:
    """
    Raises:
        ModelError: tên fixture không tồn tại
    """
    catalog = get_fixture_catalog()
    if name not in catalog:
        raise ModelError(f"Fixture không tồn tại: '{name}' (có sẵn: {', '.join(catalog)})")
    return catalog[name]
