#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Model: hệ số thị trường của bài toán thanh lý trong target zone (trường hợp Markov)
và các đại lượng dạng đóng suy ra từ chúng.

Quy ước giới hạn cho hệ số trượt giá của dark pool:
    gamma = +inf  => số hạng nhảy bằng u  (không dùng dark pool)
    gamma = 0     => số hạng nhảy bằng 0  (khối lệnh khớp hết tồn kho)
"""

import math
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import TargetZoneError
from .coefficients import Constant, CoefficientError

logger = logging.getLogger(__name__)

# Bù sai số làm tròn khi so sánh với các cận (cận đạt dấu bằng vẫn hợp lệ)
AUDIT_SLACK = 1e-9


class ModelError(TargetZoneError):
    """Tham số mô hình không hợp lệ"""


@dataclass(frozen=True)
class Mark:
    """Một nguyên tử của độ đo mark mu: mu({z}) = w, kèm hệ số trượt giá gamma(t, y)"""
    z: float
    w: float
    gamma: Any = field(default_factory=lambda: Constant(math.inf))


@dataclass(frozen=True)
class Violation:
    """Một vi phạm bất biến tại mẫu (t, y)"""
    name: str
    t: float
    y: float
    value: float
    limit: float

    def __str__(self) -> str:
        return f"{self.name} tại (t={self.t:.6g}, y={self.y:.6g}): {self.value:.6g} vs {self.limit:.6g}"


@dataclass(frozen=True)
class ModelParams:
    """
    Toàn bộ hệ số của mô hình (d = m = 1).

    beta, sigma, sigma_bar, eta, lam là các hàm tất định vector hóa của (t, y);
    marks là danh sách rời rạc của không gian mark với trọng số w_i > 0.
    """
    q: float
    T: float
    a: float
    beta: Any
    sigma: Any
    sigma_bar: Any
    eta: Any
    lam: Any
    marks: Tuple[Mark, ...] = ()
    Lambda: float = 1.0
    kappa: float = 1.0
    kappa0: float = 1.0

    @property
    def q_star(self) -> float:
        """Liên hợp Hölder q* = q/(q-1)"""
        if not self.q > 1:
            raise ModelError(f"Lũy thừa chi phí phải > 1, nhận q={self.q}")
        return self.q / (self.q - 1.0)

    @property
    def p(self) -> float:
        """q* - 1 = 1/(q-1), số mũ của phi tuyến u^{q*-1}"""
        return self.q_star - 1.0

    @property
    def weights(self) -> np.ndarray:
        return np.array([m.w for m in self.marks], dtype=float)

    @property
    def mu_total(self) -> float:
        return float(self.weights.sum()) if self.marks else 0.0

    @property
    def mark_probabilities(self) -> np.ndarray:
        return self.weights / self.mu_total

    def gamma(self, t, y, i: int):
        """Hệ số trượt giá của mark thứ i tại (t, y)"""
        return np.asarray(self.marks[i].gamma(t, y), dtype=float)

    def gammas(self, t, y) -> np.ndarray:
        """Mảng shape (n_marks, *shape(t, y))"""
        shape = np.broadcast(np.asarray(t), np.asarray(y)).shape
        if not self.marks:
            return np.zeros((0,) + shape)
        return np.stack([np.broadcast_to(self.gamma(t, y, i), shape) for i in range(len(self.marks))])

    def replace(self, **changes) -> 'ModelParams':
        return replace(self, **changes)

    def without_dark_pool(self) -> 'ModelParams':
        """Cùng mô hình nhưng gamma = +inf trên mọi mark (không đặt lệnh dark pool)"""
        marks = tuple(Mark(m.z, m.w, Constant(math.inf)) for m in self.marks)
        return replace(self, marks=marks)


def default_audit_grid(params: ModelParams, y_span: float = 5.0,
                       n_t: int = 11, n_y: int = 51) -> Tuple[np.ndarray, np.ndarray]:
    """Lưới kiểm tra mặc định: [0, T] x [a, a + y_span]"""
    return np.linspace(0.0, params.T, n_t), params.a + np.linspace(0.0, y_span, n_y)


def _evaluate(name: str, fn, t, y) -> np.ndarray:
    try:
        values = np.asarray(fn(t, y), dtype=float)
        values = np.broadcast_to(values, np.broadcast(t, y).shape)
    except Exception as e:
        raise CoefficientError(f"Không tính được hệ số '{name}': {e}") from e
    if np.isnan(values).any():
        raise CoefficientError(f"Hệ số '{name}' trả về NaN")
    return values


def validate(params: ModelParams, times: Optional[Sequence[float]] = None,
             ys: Optional[Sequence[float]] = None) -> List[Violation]:
    """
    Kiểm tra Assumption của mô hình trên lưới audit (lấy mẫu, không phải chứng minh).

    Args:
        params: tham số mô hình
        times, ys: lưới audit; mặc định default_audit_grid

    Returns:
        Danh sách vi phạm, rỗng nếu hợp lệ
    """
    if not params.q > 1:
        raise ModelError(f"Lũy thừa chi phí phải > 1, nhận q={params.q}")
    if times is None or ys is None:
        default_t, default_y = default_audit_grid(params)
        times = default_t if times is None else times
        ys = default_y if ys is None else ys

    tt, yy = np.meshgrid(np.asarray(times, dtype=float), np.asarray(ys, dtype=float), indexing='ij')
    violations: List[Violation] = []
    Lambda = params.Lambda
    slack = AUDIT_SLACK * max(1.0, Lambda)

    def flag(name, mask, values, limit):
        for idx in zip(*np.nonzero(mask)):
            violations.append(Violation(name, float(tt[idx]), float(yy[idx]), float(values[idx]), float(limit)))

    for label, value in (('horizon', params.T), ('Lambda', Lambda),
                         ('kappa', params.kappa), ('kappa0', params.kappa0)):
        if not value > 0:
            violations.append(Violation(f"positive {label}", math.nan, math.nan, float(value), 0.0))

    coefficients: Dict[str, np.ndarray] = {
        name: _evaluate(name, getattr(params, name), tt, yy)
        for name in ('beta', 'sigma', 'sigma_bar', 'eta', 'lam')
    }
    for name, values in coefficients.items():
        flag(f"bound {name}", np.abs(values) > Lambda + slack, values, Lambda)

    eta = coefficients['eta']
    lam = coefficients['lam']
    sigma_bar = coefficients['sigma_bar']
    flag("eta floor", eta < params.kappa0 - slack, eta, params.kappa0)
    flag("lam sign", lam < 0.0, lam, 0.0)
    flag("superparabolicity", sigma_bar ** 2 < params.kappa - slack, sigma_bar ** 2, params.kappa)

    # Lipschitz theo y: độ dốc sai phân hữu hạn giữa các nút liên tiếp
    if yy.shape[1] > 1:
        dy = np.diff(yy, axis=1)
        for name, values in coefficients.items():
            with np.errstate(invalid='ignore'):
                slopes = np.abs(np.diff(values, axis=1)) / dy
            flag(f"lipschitz {name}", slopes > Lambda + slack,
                 np.pad(slopes, ((0, 0), (0, 1))), Lambda)

    for i, mark in enumerate(params.marks):
        if not (mark.w > 0 and math.isfinite(mark.w)):
            violations.append(Violation("mark weight", math.nan, math.nan, float(mark.w), 0.0))
        gamma = _evaluate(f"gamma[{i}]", mark.gamma, tt, yy)
        flag("gamma range", gamma < 0.0, gamma, 0.0)

    if violations:
        logger.info(f"validate: {len(violations)} vi phạm, loại: {sorted({v.name for v in violations})}")
    return violations


def alpha(params: ModelParams, t, y):
    """alpha = (sigma^2 + sigma_bar^2) / 2"""
    return 0.5 * (np.asarray(params.sigma(t, y)) ** 2 + np.asarray(params.sigma_bar(t, y)) ** 2)


def theta(params: ModelParams, y):
    """Hàm trọng số theta(y) = 1 / (1 + (y - a)^2)"""
    return 1.0 / (1.0 + (np.asarray(y, dtype=float) - params.a) ** 2)


def theta_audit(params: ModelParams, ys: Sequence[float]) -> Dict[str, float]:
    """
    Chặn lấy mẫu của D theta, D^2 theta và theta*(y-a) (cơ sở của phép biến đổi có trọng số).
    Giá trị đúng: sup|D theta| = 3*sqrt(3)/8, sup|D^2 theta| = 2, sup theta*|y-a| = 1/2.
    """
    r = np.asarray(ys, dtype=float) - params.a
    th = 1.0 / (1.0 + r ** 2)
    d1 = -2.0 * r * th ** 2
    d2 = (6.0 * r ** 2 - 2.0) * th ** 3
    return {
        'sup_d_theta': float(np.max(np.abs(d1))),
        'sup_d2_theta': float(np.max(np.abs(d2))),
        'sup_theta_times_distance': float(np.max(np.abs(th * r))),
    }


def slippage_share(params: ModelParams, t, y, u) -> np.ndarray:
    """
    s_i = gamma_i^{q*-1} / (gamma_i^{q*-1} + u^{q*-1}) cho từng mark, shape (n_marks, ...).

    Số hạng nhảy của Hamiltonian bằng u * s_i^{q-1}; tỉ lệ khối lệnh khớp là 1 - s_i.
    gamma = +inf => s = 1; gamma = 0 => s = 0.
    """
    u = np.asarray(u, dtype=float)
    gammas = params.gammas(t, y)
    if gammas.shape[0] == 0:
        return gammas
    shape = np.broadcast_shapes(gammas.shape[1:], u.shape)
    gammas = np.broadcast_to(gammas, (gammas.shape[0],) + shape)
    up = np.broadcast_to(u, shape) ** params.p
    finite_positive = np.isfinite(gammas) & (gammas > 0)
    gp = np.where(finite_positive, gammas, 1.0) ** params.p
    share = np.where(finite_positive, gp / (gp + up), 0.0)
    return np.where(np.isinf(gammas), 1.0, share)


def execution_fraction(params: ModelParams, t, y, u) -> np.ndarray:
    """
    rho_i / x = u^{q*-1} / (gamma_i^{q*-1} + u^{q*-1}), shape (n_marks, ...).
    gamma = +inf => 0; gamma = 0 => 1 (kể cả khi u = 0).
    """
    gammas = params.gammas(t, y)
    share = slippage_share(params, t, y, u)
    if share.shape[0] == 0:
        return share
    gammas = np.broadcast_to(gammas, share.shape)
    return np.where(gammas == 0.0, 1.0, 1.0 - share)


def power_coefficient(params: ModelParams, t, y, u):
    """u^{q*-1} / ((q*-1) eta^{q*-1}): phần lũy thừa của D(u)"""
    p = params.p
    eta = np.asarray(params.eta(t, y), dtype=float)
    return np.asarray(u, dtype=float) ** p / (p * eta ** p)


def decay_coefficient(params: ModelParams, t, y, u):
    """
    D(u) >= 0 sao cho hamiltonian_zeroth(u) = lambda - D(u) * u:
        D(u) = u^{q*-1} / ((q*-1) eta^{q*-1}) + mu(Z) - sum_i w_i s_i^{q-1}
    """
    u = np.asarray(u, dtype=float)
    power = power_coefficient(params, t, y, u)
    share = slippage_share(params, t, y, u)
    if share.shape[0] == 0:
        return power
    jump = np.tensordot(params.weights, share ** (params.q - 1.0), axes=1)
    return power + params.mu_total - jump


def hamiltonian_zeroth(params: ModelParams, t, y, u):
    """
    Số hạng phản ứng bậc 0 của phương trình HJB:
        lambda - u^{q*}/((q*-1) eta^{q*-1}) - mu(Z) u + sum_i w_i gamma_i u / (gamma_i^{q*-1} + u^{q*-1})^{q-1}

    Raises:
        ModelError: nếu u < 0
    """
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ModelError("hamiltonian_zeroth chỉ định nghĩa cho u >= 0")
    lam = np.asarray(params.lam(t, y), dtype=float)
    return lam - decay_coefficient(params, t, y, u) * u
