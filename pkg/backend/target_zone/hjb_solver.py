#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
HJB solver: giải các bài toán Neumann bị cắt cụt (u_T = M) trên lưới hữu hạn,
dựng thang u^1 <= u^2 <= ... , xấp xỉ nghiệm có điều kiện cuối kỳ dị và tính
các bao nghiệm ODE dạng đóng dùng làm oracle.

Phương trình (không trọng số, trường hợp Markov nên psi = 0):
    d_t u + alpha D^2 u + beta D u + hamiltonian_zeroth(u) = 0,  Du(a) = 0,  u_T = M
"""

import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.interpolate import CubicHermiteSpline, RegularGridInterpolator
from scipy.linalg import solve_banded

from . import TargetZoneError
from .model import (
    ModelError, ModelParams, alpha, decay_coefficient, power_coefficient, slippage_share, theta, validate,
)

logger = logging.getLogger(__name__)

LADDER_LIMIT = "ladder-limit"

# Sai số làm tròn cho phép khi kiểm tra tính không âm (tương đối theo max|u|)
NEGATIVE_ROUNDOFF = 1e-10

# tau_mono = tau_env = SCHEME_ERROR_FACTOR x sai số lược đồ đo được (không nhỏ hơn sàn)
SCHEME_ERROR_FACTOR = 10.0
SCHEME_ERROR_FLOOR = 1e-8
EPS_DOMAIN = 1e-3

NONLINEAR_METHODS = ("newton", "imex")


class SolverError(TargetZoneError):
    """Bước phi tuyến không hội tụ hoặc lưới không phù hợp"""


class NegativeValueError(SolverError):
    """Lược đồ sinh giá trị âm: dừng, không cắt về 0"""


class MonotonicityError(SolverError):
    """Thang nghiệm không tăng theo M vượt quá tau_mono"""

    def __init__(self, message: str, max_violation: float):
        super().__init__(message)
        self.max_violation = max_violation


class LadderNotConvergedError(SolverError):
    """Hai bậc cuối của thang còn cách nhau quá eps_ladder"""

    def __init__(self, message: str, gap: float):
        super().__init__(message)
        self.gap = gap


class EnvelopeViolationError(SolverError):
    """Nghiệm rơi ra ngoài cặp bao ODE"""

    def __init__(self, message: str, max_violation: float):
        super().__init__(message)
        self.max_violation = max_violation


class CoefficientOrderError(TargetZoneError):
    """Cặp hệ số không thỏa thứ tự yêu cầu của comparison harness"""


class OutOfRangeError(TargetZoneError):
    """Truy vấn nằm ngoài lưới của surface"""


# =========================
# Grid
# =========================

@dataclass(frozen=True, eq=False)
class Grid:
    """
    Lưới thời gian x không gian. y_j = a + j*h, j = 0..n_space-1;
    t_grid tăng ngặt, bắt đầu tại 0 (có thể làm mịn hình học gần T).
    """
    a: float
    y_max: float
    n_space: int
    t_grid: np.ndarray

    def __post_init__(self):
        t_grid = np.asarray(self.t_grid, dtype=float)
        t_grid.setflags(write=False)
        object.__setattr__(self, 't_grid', t_grid)
        if self.n_space < 3:
            raise SolverError(f"n_space phải >= 3, nhận {self.n_space}")
        if not self.y_max > self.a:
            raise SolverError(f"y_max ({self.y_max}) phải lớn hơn a ({self.a})")
        if t_grid.ndim != 1 or t_grid.size < 1 or t_grid[0] != 0.0:
            raise SolverError("t_grid phải là mảng 1 chiều bắt đầu tại 0")
        if np.any(np.diff(t_grid) <= 0):
            raise SolverError("t_grid phải tăng ngặt")

    @property
    def h(self) -> float:
        return (self.y_max - self.a) / (self.n_space - 1)

    @cached_property
    def y_nodes(self) -> np.ndarray:
        nodes = self.a + self.h * np.arange(self.n_space)
        nodes[-1] = self.y_max
        nodes.setflags(write=False)
        return nodes

    @property
    def t_max(self) -> float:
        return float(self.t_grid[-1])

    @classmethod
    def build(cls, params: ModelParams, y_max: float, n_space: int, n_time: int,
              refine_count: int = 0, refine_ratio: float = 0.95) -> 'Grid':
        """
        Lưới thời gian bước dt = T/n_time, phân cấp hình học gần T.

        Với refine_count > 0, lớp cuối gồm refine_count ô có độ rộng dt * refine_ratio^j
        (j = 0 xa T nhất), tổng cộng khoảng dt/(1 - refine_ratio); phần còn lại [0, T - W]
        chia đều với bước không quá dt. Mỗi ô trong lớp rộng cỡ (1 - r)/r lần khoảng cách
        tới T, đủ để lần theo nghiệm ~ (T - t)^{-(q-1)}.

        Raises:
            SolverError: n_time < 1 hoặc refine_ratio ngoài (0, 1)
        """
        if n_time < 1:
            raise SolverError(f"n_time phải >= 1, nhận {n_time}")
        T = params.T
        if refine_count <= 0:
            return cls(params.a, float(y_max), int(n_space), np.linspace(0.0, T, n_time + 1))
        if not 0.0 < refine_ratio < 1.0:
            raise SolverError(f"refine_ratio phải thuộc (0, 1), nhận {refine_ratio}")

        dt = T / n_time
        sizes = dt * refine_ratio ** np.arange(refine_count)
        width = float(sizes.sum())
        if width >= T:
            sizes *= T / width
            width = T
            head = np.array([0.0])
        else:
            n_head = max(1, int(math.ceil((T - width) / dt - 1e-9)))
            head = np.linspace(0.0, T - width, n_head + 1)[:-1]
        layer = (T - width) + np.cumsum(sizes)
        layer[-1] = T
        return cls(params.a, float(y_max), int(n_space), np.concatenate([head, layer]))

    def refined(self) -> 'Grid':
        """Chia đôi mọi ô thời gian và bước không gian (nút cũ vẫn là nút của lưới mới)"""
        t = self.t_grid
        mids = 0.5 * (t[:-1] + t[1:])
        times = np.empty(t.size + mids.size)
        times[0::2] = t
        times[1::2] = mids
        return Grid(self.a, self.y_max, 2 * self.n_space - 1, times)

    def truncated(self, t_cut: float) -> 'Grid':
        """Lưới thu hẹp về [0, t_cut]; thêm nút t_cut nếu chưa có"""
        t = self.t_grid
        kept = t[t < t_cut - 1e-14 * max(1.0, t_cut)]
        times = np.append(kept, t_cut) if kept.size else np.array([0.0])
        return Grid(self.a, self.y_max, self.n_space, times)

    def with_y_max(self, y_max: float) -> 'Grid':
        """Cùng bước h, miền không gian [a, y_max] (dùng cho kiểm tra biên phải)"""
        n_space = int(round((y_max - self.a) / self.h)) + 1
        return Grid(self.a, float(y_max), n_space, self.t_grid)


@dataclass(frozen=True)
class SchemeSettings:
    """
    Cấu hình lược đồ thời gian.

    theta_time = 0.5 là Crank–Nicolson, 1.0 là Euler lùi. startup_steps bước đầu
    (tính từ T) luôn dùng Euler lùi; bước nào có dt * max D(u) > stiff_switch cũng vậy.

    nonlinear = "newton" giải đầy đủ phần phản ứng; "imex" tuyến tính hóa số hạng lũy
    thừa quanh u_old, để số hạng nhảy/suy giảm tường minh, một lần giải ba đường chéo
    mỗi bước (bậc một theo thời gian).
    """
    theta_time: float = 0.5
    startup_steps: int = 2
    stiff_switch: float = 1.0
    neumann_order: int = 2
    newton_tol: float = 1e-11
    newton_max_iter: int = 60
    nonlinear: str = "newton"

    def __post_init__(self):
        if self.nonlinear not in NONLINEAR_METHODS:
            raise SolverError(f"nonlinear phải thuộc {NONLINEAR_METHODS}, nhận '{self.nonlinear}'")


# =========================
# Value surface
# =========================

@dataclass(frozen=True, eq=False)
class ValueSurface:
    """u[k][j] >= 0 trên (t_k, y_j) cùng metadata của lần giải"""
    grid: Grid
    values: np.ndarray
    truncation_level: Union[float, str]
    boundary_right: str = "neumann"
    neumann_order: int = 2
    psi_zero: bool = True
    residual: float = 0.0
    error_estimate: Optional[float] = None
    ladder_gap: Optional[float] = None
    rung_level: Optional[float] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        expected = (self.grid.t_grid.size, self.grid.n_space)
        if values.shape != expected:
            raise SolverError(f"values có shape {values.shape}, lưới cần {expected}")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @property
    def times(self) -> np.ndarray:
        return self.grid.t_grid

    @property
    def ys(self) -> np.ndarray:
        return self.grid.y_nodes

    @property
    def t_max(self) -> float:
        return self.grid.t_max

    @cached_property
    def _interpolator(self):
        if self.times.size == 1:
            return None
        return RegularGridInterpolator((self.times, self.ys), self.values, method='linear')

    def row(self, k: int) -> np.ndarray:
        return self.values[k]

    def restricted(self, t_cut: float) -> 'ValueSurface':
        """Thu hẹp về [0, t_cut] (hàng t_cut nội suy tuyến tính nếu không phải nút)"""
        grid = self.grid.truncated(t_cut)
        values = np.vstack([
            self.values[:grid.t_grid.size - 1],
            interpolate(self, t_cut, self.ys)[None, :],
        ]) if grid.t_grid.size > 1 else interpolate(self, 0.0, self.ys)[None, :]
        return replace(self, grid=grid, values=values)

    def with_metadata(self, **changes) -> 'ValueSurface':
        return replace(self, **changes)


def interpolate(surface: ValueSurface, t, y):
    """
    Nội suy song tuyến tính theo (t, y); chính xác tại nút lưới.

    Raises:
        OutOfRangeError: nếu (t, y) nằm ngoài [0, t_max] x [a, y_max]
    """
    t_arr, y_arr = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(y, dtype=float))
    if t_arr.size == 0:
        return np.zeros(t_arr.shape)
    slack_t = 1e-12 * max(1.0, surface.t_max)
    slack_y = 1e-12 * max(1.0, abs(surface.grid.y_max))
    if (np.any(t_arr < -slack_t) or np.any(t_arr > surface.t_max + slack_t)
            or np.any(y_arr < surface.grid.a - slack_y) or np.any(y_arr > surface.grid.y_max + slack_y)):
        raise OutOfRangeError(
            f"Truy vấn ngoài lưới [0, {surface.t_max}] x [{surface.grid.a}, {surface.grid.y_max}]")
    t_arr = np.clip(t_arr, 0.0, surface.t_max)
    y_arr = np.clip(y_arr, surface.grid.a, surface.grid.y_max)
    if surface._interpolator is None:
        result = np.interp(y_arr, surface.ys, surface.values[0])
    else:
        points = np.stack([t_arr.ravel(), y_arr.ravel()], axis=-1)
        result = surface._interpolator(points).reshape(t_arr.shape)
    return float(result) if result.ndim == 0 else result


def weighted_values(surface: ValueSurface, params: ModelParams) -> np.ndarray:
    """v = theta * u: biến đổi có trọng số, chỉ dùng để chẩn đoán"""
    return surface.values * theta(params, surface.ys)[None, :]


# =========================
# Envelopes
# =========================

@dataclass(frozen=True)
class EnvelopePair:
    """
    Cặp bao không phụ thuộc y: lower(t) <= u^M(t, y) <= upper(t).

    tail(t) là nghiệm dạng đóng Y^M; singular(t) = Lambda/(T-t)^{q-1} + Lambda*(T-t).
    """
    M: float
    T: float
    lower: Callable
    upper: Callable
    tail: Callable
    singular: Callable


def _lower_envelope(params: ModelParams, M: float) -> Callable:
    q, p, T = params.q, params.p, params.T
    kappa_p = params.kappa0 ** p
    inv_M = 0.0 if math.isinf(M) else (M ** -p if M > 0 else math.inf)
    mu = params.mu_total

    def lower(t):
        s = T - np.asarray(t, dtype=float)
        with np.errstate(divide='ignore', over='ignore', invalid='ignore'):
            if mu > 0:
                c = p * kappa_p * mu
                base = c / ((1.0 + c * inv_M) * np.exp(p * mu * s) - 1.0)
            else:
                # giới hạn mu -> 0 của công thức đóng
                base = kappa_p / (s + kappa_p * inv_M)
            value = base ** (q - 1.0)
        return float(value) if np.ndim(value) == 0 else value

    return lower


def _rk4_backward(rhs: Callable, terminal: float, T: float, n_steps: int) -> CubicHermiteSpline:
    """RK4 lùi từ T về 0; trả về spline Hermite bậc ba trên [0, T]"""
    ts = np.linspace(T, 0.0, n_steps + 1)
    xs = np.empty(n_steps + 1)
    xs[0] = terminal
    dt = -T / n_steps
    for i in range(n_steps):
        x = xs[i]
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * dt * k1)
        k3 = rhs(x + 0.5 * dt * k2)
        k4 = rhs(x + dt * k3)
        xs[i + 1] = x + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    return CubicHermiteSpline(ts[::-1], xs[::-1], rhs(xs[::-1]))


def _upper_envelope(params: ModelParams, M: float, n_steps: int) -> Callable:
    """
    Gamma^M: -dGamma/dt = Lambda - Gamma^{q*}/((q*-1) Lambda^{q*-1}), Gamma_T = M.
    Với M > 0 tích phân theo biến z = Gamma^{-(q*-1)} (chính quy tại T kể cả khi M = +inf):
        dz/dt = -Lambda^{-(q*-1)} + (q*-1) Lambda z^q
    """
    q, p, T, Lambda = params.q, params.p, params.T, params.Lambda

    if M == 0:
        def gamma_rhs(g):
            return -Lambda + np.maximum(g, 0.0) ** params.q_star / (p * Lambda ** p)

        direct = _rk4_backward(gamma_rhs, 0.0, T, n_steps)

        def upper_direct(t):
            value = direct(np.clip(np.asarray(t, dtype=float), 0.0, T))
            return float(value) if np.ndim(value) == 0 else value

        return upper_direct

    def z_rhs(z):
        return -Lambda ** -p + p * Lambda * np.maximum(z, 0.0) ** q

    spline = _rk4_backward(z_rhs, 0.0 if math.isinf(M) else M ** -p, T, n_steps)

    def upper(t):
        z = spline(np.clip(np.asarray(t, dtype=float), 0.0, T))
        with np.errstate(divide='ignore'):
            value = np.maximum(z, 0.0) ** -(q - 1.0)
        return float(value) if np.ndim(value) == 0 else value

    return upper


def ode_envelopes(params: ModelParams, M: float, n_steps: int = 4096) -> EnvelopePair:
    """
    Bao dưới: nghiệm dạng đóng với (lambda, eta, gamma) = (0, kappa0, 0).
    Bao trên: Gamma^M với (lambda, eta, gamma) = (Lambda, Lambda, +inf), RK4.

    Args:
        params: tham số mô hình
        M: mức cắt cụt (math.inf cho giới hạn kỳ dị)
        n_steps: số bước RK4 trên [0, T]
    """
    q, p, T, Lambda = params.q, params.p, params.T, params.Lambda
    inv_M = 0.0 if math.isinf(M) else (M ** -p if M > 0 else math.inf)

    def tail(t):
        s = T - np.asarray(t, dtype=float)
        with np.errstate(divide='ignore'):
            value = (s / Lambda ** p + inv_M) ** -(q - 1.0)
        return float(value) if np.ndim(value) == 0 else value

    def singular(t):
        s = T - np.asarray(t, dtype=float)
        with np.errstate(divide='ignore'):
            value = Lambda / s ** (q - 1.0) + Lambda * s
        return float(value) if np.ndim(value) == 0 else value

    if params.mu_total == 0:
        logger.info("mu(Z) = 0: bao dưới dùng giới hạn mu -> 0 của công thức đóng")
    return EnvelopePair(M=M, T=T, lower=_lower_envelope(params, M),
                        upper=_upper_envelope(params, M, n_steps), tail=tail, singular=singular)


def rate_constants(envelopes: EnvelopePair, times: Sequence[float], q: float) -> Tuple[float, float]:
    """
    Hằng số tính số (c, C) sao cho c/(T-t)^{q-1} <= u <= C/(T-t)^{q-1} trên các t < T đã cho.
    """
    t = np.asarray(times, dtype=float)
    t = t[t < envelopes.T]
    scale = (envelopes.T - t) ** (q - 1.0)
    c = float(np.min(np.asarray(envelopes.lower(t)) * scale))
    C = float(np.max(np.asarray(envelopes.upper(t)) * scale))
    return c, C


# =========================
# Discrete operator
# =========================

def _operator_bands(alpha_row: np.ndarray, beta_row: np.ndarray, h: float,
                    neumann_order: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Ba đường chéo của L = alpha D^2 + beta D (sai phân trung tâm) với nút ma Neumann
    hai đầu: bậc 2 dùng u[-1] = u[1], bậc 1 dùng u[-1] = u[0].
    """
    diff = alpha_row / h ** 2
    adv = beta_row / (2.0 * h)
    lower = diff - adv
    upper = diff + adv
    diag = -2.0 * diff
    if neumann_order == 2:
        upper[0] = upper[0] + lower[0]
        lower[-1] = lower[-1] + upper[-1]
    elif neumann_order == 1:
        diag[0] = diag[0] + lower[0]
        diag[-1] = diag[-1] + upper[-1]
    else:
        raise SolverError(f"neumann_order phải là 1 hoặc 2, nhận {neumann_order}")
    lower[0] = 0.0
    upper[-1] = 0.0
    return lower, diag, upper


def _apply(bands, u: np.ndarray) -> np.ndarray:
    lower, diag, upper = bands
    out = diag * u
    out[1:] += lower[1:] * u[:-1]
    out[:-1] += upper[:-1] * u[1:]
    return out


def _reaction_slope(params: ModelParams, t: float, ys: np.ndarray, u: np.ndarray) -> np.ndarray:
    """d/du [D(u) u] = q* u^{q*-1}/((q*-1) eta^{q*-1}) + mu(Z) - sum_i w_i s_i^q  (>= 0)"""
    p = params.p
    eta = np.asarray(params.eta(t, ys), dtype=float)
    slope = params.q_star * u ** p / (p * eta ** p)
    share = slippage_share(params, t, ys, u)
    if share.shape[0]:
        slope = slope + params.mu_total - np.tensordot(params.weights, share ** params.q, axes=1)
    return slope


@dataclass
class _TimeRow:
    t: float
    bands: Tuple[np.ndarray, np.ndarray, np.ndarray]
    lam: np.ndarray


def _time_row(params: ModelParams, grid: Grid, t: float, neumann_order: int) -> _TimeRow:
    ys = grid.y_nodes
    alpha_row = np.asarray(alpha(params, t, ys), dtype=float) * np.ones_like(ys)
    beta_row = np.asarray(params.beta(t, ys), dtype=float) * np.ones_like(ys)
    lam = np.asarray(params.lam(t, ys), dtype=float) * np.ones_like(ys)
    return _TimeRow(t, _operator_bands(alpha_row, beta_row, grid.h, neumann_order), lam)


def _banded(bands, dt: float, theta_time: float, reaction: np.ndarray) -> np.ndarray:
    """Ma trận dạng băng của 1/dt - theta L + diag(reaction)"""
    lower, diag, upper = bands
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = -theta_time * upper[:-1]
    ab[1] = 1.0 / dt - theta_time * diag + reaction
    ab[2, :-1] = -theta_time * lower[1:]
    return ab


def _checked_nonnegative(u: np.ndarray, t: float, scale: float) -> np.ndarray:
    floor = -NEGATIVE_ROUNDOFF * scale
    if np.min(u) < floor:
        raise NegativeValueError(f"Giá trị âm {np.min(u):.3g} tại t={t:.6g}: lược đồ vi phạm tính không âm")
    if np.min(u) < 0.0:
        logger.warning(f"t={t:.6g}: đưa {int(np.sum(u < 0))} giá trị âm cỡ làm tròn ({np.min(u):.3g}) về 0")
        u = np.maximum(u, 0.0)
    return u


def _imex_step(params: ModelParams, grid: Grid, old: _TimeRow, new: _TimeRow, u_old: np.ndarray,
               theta_time: float) -> Tuple[np.ndarray, float]:
    """
    Bước IMEX: khuếch tán/trôi ẩn theo theta, số hạng lũy thừa tuyến tính hóa thành
    u_old^{q*-1} u / ((q*-1) eta^{q*-1}), phần mu(Z) - nhảy tường minh.
    """
    ys = grid.y_nodes
    dt = old.t - new.t
    power = power_coefficient(params, new.t, ys, u_old)
    rest = decay_coefficient(params, new.t, ys, u_old) - power
    explicit = theta_time * new.lam - rest * u_old
    if theta_time < 1.0:
        explicit = explicit + (1.0 - theta_time) * (_apply(old.bands, u_old) + old.lam)
    rhs = u_old / dt + explicit
    scale = 1.0 + float(np.max(np.abs(u_old)))
    u = _checked_nonnegative(solve_banded((1, 1), _banded(new.bands, dt, theta_time, power), rhs), new.t, scale)
    residual = u / dt - theta_time * _apply(new.bands, u) + power * u - rhs
    return u, float(np.max(np.abs(residual))) * dt / scale


def _step(params: ModelParams, grid: Grid, old: _TimeRow, new: _TimeRow, u_old: np.ndarray,
          theta_time: float, settings: SchemeSettings) -> Tuple[np.ndarray, float]:
    """
    Một bước lùi t_{k+1} -> t_k của lược đồ theta:
        (u - u_old)/dt = theta [L u + lambda - D(u) u]_new + (1 - theta) [L u_old + lambda - D(u_old) u_old]_old
    Phần phi tuyến giải bằng Newton (ma trận Jacobi ba đường chéo); nếu một bước Newton
    cho giá trị âm thì thay bằng bước Picard (D đóng băng) vốn bảo toàn tính không âm.
    """
    ys = grid.y_nodes
    dt = old.t - new.t
    explicit = theta_time * new.lam
    if theta_time < 1.0:
        d_old = decay_coefficient(params, old.t, ys, u_old)
        explicit = explicit + (1.0 - theta_time) * (_apply(old.bands, u_old) + old.lam - d_old * u_old)
    rhs = u_old / dt + explicit
    scale = 1.0 + float(np.max(np.abs(u_old)))

    def residual(u):
        d = decay_coefficient(params, new.t, ys, u)
        return u / dt - theta_time * _apply(new.bands, u) + theta_time * d * u - rhs

    u = u_old.copy()
    for iteration in range(settings.newton_max_iter):
        slope = _reaction_slope(params, new.t, ys, u)
        candidate = u - solve_banded((1, 1), _banded(new.bands, dt, theta_time, theta_time * slope), residual(u))
        if np.min(candidate) < 0.0:
            frozen = decay_coefficient(params, new.t, ys, u)
            candidate = solve_banded((1, 1), _banded(new.bands, dt, theta_time, theta_time * frozen), rhs)
        change = float(np.max(np.abs(candidate - u)))
        u = candidate
        if change <= settings.newton_tol * (1.0 + float(np.max(np.abs(u)))):
            break
    else:
        raise SolverError(
            f"Bước phi tuyến tại t={new.t:.6g} không hội tụ sau {settings.newton_max_iter} vòng "
            f"(thay đổi cuối {change:.3g}); hãy làm mịn lưới thời gian")

    u = _checked_nonnegative(u, new.t, scale)
    step_residual = float(np.max(np.abs(residual(u)))) * dt / scale
    return u, step_residual


def solve_truncated(params: ModelParams, grid: Grid, M: float,
                    settings: SchemeSettings = SchemeSettings()) -> ValueSurface:
    """
    Giải bài toán cắt cụt u_T = M lùi theo thời gian.

    Args:
        params: tham số mô hình (phải qua validate)
        grid: lưới
        M: mức cắt cụt hữu hạn, M >= 0
        settings: cấu hình lược đồ

    Returns:
        ValueSurface với truncation_level = M

    Raises:
        ModelError: params vi phạm Assumption trên lưới
        SolverError / NegativeValueError: lược đồ thất bại
    """
    if not (M >= 0 and math.isfinite(M)):
        raise SolverError(f"M phải hữu hạn và >= 0, nhận {M}")
    violations = validate(params, grid.t_grid[:: max(1, grid.t_grid.size // 20)], grid.y_nodes)
    if violations:
        raise ModelError(f"Tham số vi phạm {len(violations)} điều kiện, ví dụ: {violations[0]}")

    ys = grid.y_nodes
    peclet = float(np.max(np.abs(params.beta(0.0, ys)) * grid.h / (2.0 * alpha(params, 0.0, ys))))
    if peclet > 1.0:
        logger.warning(f"Số Péclet lưới {peclet:.3g} > 1: sai phân trung tâm có thể mất tính đơn điệu")

    times = grid.t_grid
    K = times.size - 1
    values = np.empty((K + 1, grid.n_space))
    values[K] = M
    residual = 0.0
    old = _time_row(params, grid, times[K], settings.neumann_order)
    for step, k in enumerate(range(K - 1, -1, -1)):
        new = _time_row(params, grid, times[k], settings.neumann_order)
        dt = times[k + 1] - times[k]
        theta_time = settings.theta_time
        if step < settings.startup_steps:
            theta_time = 1.0
        elif theta_time < 1.0:
            stiffness = dt * float(np.max(decay_coefficient(params, times[k + 1], ys, values[k + 1])))
            if stiffness > settings.stiff_switch:
                theta_time = 1.0
        if settings.nonlinear == "imex":
            values[k], step_residual = _imex_step(params, grid, old, new, values[k + 1], theta_time)
        else:
            values[k], step_residual = _step(params, grid, old, new, values[k + 1], theta_time, settings)
        residual = max(residual, step_residual)
        old = new

    surface = ValueSurface(grid=grid, values=values, truncation_level=float(M), rung_level=float(M),
                           neumann_order=settings.neumann_order, residual=residual)
    logger.debug(f"solve_truncated M={M} ({settings.nonlinear}): u(0) in [{values[0].min():.6g}, {values[0].max():.6g}], "
                 f"residual {residual:.3g}, Neumann {neumann_residual(surface):.3g}")
    return surface


def neumann_residual(surface: ValueSurface) -> float:
    """
    max_k |Du(t_k, a)| đo bằng sai phân một phía cùng bậc với nút ma:
    bậc 1 (u_1 - u_0)/h, bậc 2 (-3u_0 + 4u_1 - u_2)/(2h). Kỳ vọng O(h^order).
    """
    u = surface.values
    h = surface.grid.h
    if surface.neumann_order == 1:
        slope = (u[:, 1] - u[:, 0]) / h
    else:
        slope = (-3.0 * u[:, 0] + 4.0 * u[:, 1] - u[:, 2]) / (2.0 * h)
    return float(np.max(np.abs(slope)))


@dataclass
class DomainVerdict:
    """Độ nhạy của u với vị trí biên phải y_max"""
    change: float
    tolerance: float
    passed: bool
    y_max: float
    wide_y_max: float


def boundary_sensitivity(params: ModelParams, grid: Grid, M: float,
                         settings: SchemeSettings = SchemeSettings(),
                         eps_domain: float = EPS_DOMAIN, t_fraction: float = 0.9) -> DomainVerdict:
    """
    Giải lại với y_max gấp đôi (cùng h, cùng lưới thời gian) và so sánh trên vùng
    t <= t_fraction T, y <= a + (y_max - a)/2.

    Returns:
        DomainVerdict; change là sup|u - u_wide| / sup|u_wide| trên vùng so sánh
    """
    wide_grid = grid.with_y_max(grid.a + 2.0 * (grid.y_max - grid.a))
    base = solve_truncated(params, grid, M, settings)
    wide = solve_truncated(params, wide_grid, M, settings)
    rows = grid.t_grid <= t_fraction * params.T + 1e-12
    cols = grid.y_nodes <= grid.a + 0.5 * (grid.y_max - grid.a) + 1e-12
    change = relative_gap(base.values[rows][:, cols], wide.values[:, :grid.n_space][rows][:, cols])
    passed = change < eps_domain
    logger.info(f"boundary_sensitivity: y_max {grid.y_max} -> {wide_grid.y_max}, thay đổi {change:.3g} "
                f"(eps {eps_domain:.3g}) -> {'đạt' if passed else 'KHÔNG đạt'}")
    return DomainVerdict(change=change, tolerance=eps_domain, passed=passed,
                         y_max=grid.y_max, wide_y_max=wide_grid.y_max)


# =========================
# Ladder
# =========================

def relative_violation(lower_values: np.ndarray, upper_values: np.ndarray) -> float:
    """max (lower - upper)^+ / (1 + |upper|): thước đo vi phạm thứ tự dùng chung"""
    excess = np.maximum(np.asarray(lower_values) - np.asarray(upper_values), 0.0)
    return float(np.max(excess / (1.0 + np.abs(upper_values)))) if excess.size else 0.0


def relative_gap(first: np.ndarray, second: np.ndarray) -> float:
    """Khoảng cách sup tương đối sup|first - second| / sup|second|"""
    norm = float(np.max(np.abs(second)))
    if norm == 0.0:
        return float(np.max(np.abs(first)))
    return float(np.max(np.abs(first - second))) / norm


@dataclass
class Ladder:
    """Thang nghiệm cắt cụt; dùng được như list các ValueSurface"""
    rungs: List[ValueSurface]
    gap: Optional[float]
    max_violation: float
    tau_mono: float

    def __iter__(self):
        return iter(self.rungs)

    def __len__(self):
        return len(self.rungs)

    def __getitem__(self, index):
        return self.rungs[index]

    @property
    def final(self) -> ValueSurface:
        return self.rungs[-1]


def estimate_scheme_error(params: ModelParams, grid: Grid, M: float,
                          settings: SchemeSettings = SchemeSettings()) -> float:
    """Sai số lược đồ đo được: max |u_h - u_{h/2}| / (1 + |u_{h/2}|) trên các nút chung"""
    coarse = solve_truncated(params, grid, M, settings)
    fine = solve_truncated(params, grid.refined(), M, settings)
    fine_on_coarse = fine.values[::2, ::2]
    return float(np.max(np.abs(coarse.values - fine_on_coarse) / (1.0 + np.abs(fine_on_coarse))))


def scheme_tolerance(params: ModelParams, grid: Grid, M: float,
                     settings: SchemeSettings = SchemeSettings()) -> float:
    """Dung sai tau_mono/tau_env mặc định: SCHEME_ERROR_FACTOR x sai số lược đồ, không dưới sàn"""
    error = estimate_scheme_error(params, grid, M, settings)
    return max(SCHEME_ERROR_FACTOR * error, SCHEME_ERROR_FLOOR)


def grid_convergence(params: ModelParams, grid: Grid, M: float,
                     exact: Callable, levels: int = 2,
                     settings: SchemeSettings = SchemeSettings()) -> Tuple[List[float], List[float]]:
    """
    Sai số sup so với nghiệm chính xác exact(t, y) trên các lưới làm mịn liên tiếp.

    Returns:
        (errors, ratios) với ratios[i] = errors[i] / errors[i+1]
    """
    errors = []
    current = grid
    for _ in range(levels):
        surface = solve_truncated(params, current, M, settings)
        tt, yy = np.meshgrid(current.t_grid, current.y_nodes, indexing='ij')
        errors.append(float(np.max(np.abs(surface.values - exact(tt, yy)))))
        current = current.refined()
    ratios = [errors[i] / errors[i + 1] if errors[i + 1] > 0 else math.inf for i in range(levels - 1)]
    logger.info(f"grid_convergence: errors={errors}, ratios={ratios}")
    return errors, ratios


def solve_ladder(params: ModelParams, grid: Grid, M_schedule: Sequence[float],
                 settings: SchemeSettings = SchemeSettings(), tau_mono: Optional[float] = None,
                 delta: Optional[float] = None, workers: int = 1) -> Ladder:
    """
    Giải các bậc M_1 <= M_2 <= ... và kiểm tra thang không giảm theo M.

    Args:
        tau_mono: dung sai đơn điệu (tương đối); None => scheme_tolerance(...) trên bậc M lớn nhất
        delta: cửa sổ t <= T - delta để tính khoảng cách hai bậc cuối (mặc định 0.1 T)
        workers: số luồng giải song song các bậc

    Raises:
        MonotonicityError: vi phạm vượt tau_mono
    """
    schedule = [float(M) for M in M_schedule]
    if not schedule:
        raise SolverError("M_schedule rỗng")
    if any(b < a for a, b in zip(schedule, schedule[1:])):
        raise SolverError(f"M_schedule phải tăng dần, nhận {schedule}")
    if tau_mono is None:
        tau_mono = scheme_tolerance(params, grid, schedule[-1], settings)
        logger.info(f"tau_mono tự suy ra từ sai số lược đồ: {tau_mono:.3g}")

    if workers > 1 and len(schedule) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rungs = list(pool.map(lambda M: solve_truncated(params, grid, M, settings), schedule))
    else:
        rungs = [solve_truncated(params, grid, M, settings) for M in schedule]

    max_violation = 0.0
    for lower_rung, upper_rung in zip(rungs, rungs[1:]):
        max_violation = max(max_violation, relative_violation(lower_rung.values, upper_rung.values))
    if max_violation > tau_mono:
        raise MonotonicityError(
            f"Thang không đơn điệu: vi phạm {max_violation:.3g} > tau_mono {tau_mono:.3g}", max_violation)

    gap = None
    if len(rungs) > 1:
        window = grid.t_grid <= params.T - (0.1 * params.T if delta is None else delta)
        gap = relative_gap(rungs[-2].values[window], rungs[-1].values[window])
        rungs[-1] = rungs[-1].with_metadata(ladder_gap=gap)
    logger.info(f"solve_ladder: {len(rungs)} bậc, M_max={schedule[-1]}, gap={gap}, vi phạm đơn điệu={max_violation:.3g}")
    return Ladder(rungs=rungs, gap=gap, max_violation=max_violation, tau_mono=tau_mono)


def envelope_violation(surface: ValueSurface, envelopes: EnvelopePair) -> float:
    """Vi phạm tương đối lớn nhất của lower <= min_y u và max_y u <= upper trên các t < T"""
    times = surface.times
    inside = times < envelopes.T
    if not np.any(inside):
        return 0.0
    lower = np.asarray(envelopes.lower(times[inside]), dtype=float)
    upper = np.asarray(envelopes.upper(times[inside]), dtype=float)
    rows = surface.values[inside]
    below = relative_violation(lower, rows.min(axis=1))
    above = relative_violation(rows.max(axis=1), upper)
    return max(below, above)


def singular_limit(params: ModelParams, grid: Grid, M_schedule: Sequence[float], t_cut: float,
                   settings: SchemeSettings = SchemeSettings(), eps_ladder: float = 1e-3,
                   tau_env: Optional[float] = None, tau_mono: Optional[float] = None,
                   ladder: Optional[Ladder] = None) -> ValueSurface:
    """
    Xấp xỉ nghiệm kỳ dị trên [0, t_cut]: bậc cao nhất của thang, chỉ chấp nhận khi
    (i) hai bậc cuối cách nhau < eps_ladder (sup tương đối trên [0, t_cut]) và
    (ii) nghiệm nằm giữa cặp bao tính với cùng M lớn nhất.

    Raises:
        LadderNotConvergedError: thang chưa hội tụ trên [0, t_cut]
        EnvelopeViolationError: nghiệm vượt khỏi cặp bao
    """
    if not t_cut < params.T:
        raise SolverError(f"t_cut ({t_cut}) phải nhỏ hơn T ({params.T})")
    if ladder is None:
        ladder = solve_ladder(params, grid, M_schedule, settings, tau_mono=tau_mono)
    if len(ladder) < 2:
        raise LadderNotConvergedError("Cần ít nhất hai bậc để kiểm tra hội tụ", math.inf)

    previous = ladder[-2].restricted(t_cut)
    limit = ladder[-1].restricted(t_cut)
    gap = relative_gap(previous.values, limit.values)
    if gap >= eps_ladder:
        raise LadderNotConvergedError(
            f"Thang chưa hội tụ trên [0, {t_cut}]: gap {gap:.3g} >= eps_ladder {eps_ladder:.3g}", gap)

    M_max = float(ladder[-1].truncation_level)
    envelopes = ode_envelopes(params, M_max)
    if tau_env is None:
        tau_env = ladder.tau_mono
    violation = envelope_violation(limit, envelopes)
    if violation > tau_env:
        raise EnvelopeViolationError(
            f"Nghiệm vượt khỏi cặp bao: {violation:.3g} > tau_env {tau_env:.3g}", violation)

    logger.info(f"singular_limit: t_cut={t_cut}, gap={gap:.3g}, vi phạm bao={violation:.3g}")
    return limit.with_metadata(truncation_level=LADDER_LIMIT, ladder_gap=gap)


# =========================
# Comparison harness
# =========================

@dataclass
class ComparisonVerdict:
    """Kết quả so sánh u^1 <= u^2 + tau tại mọi nút"""
    max_violation: float
    tolerance: float
    passed: bool
    surfaces: Tuple[ValueSurface, ValueSurface] = field(repr=False, default=None)


def _audit_order(params_1: ModelParams, params_2: ModelParams, grid: Grid) -> None:
    tt, yy = np.meshgrid(grid.t_grid, grid.y_nodes, indexing='ij')
    tol = 1e-12

    def values(params, name):
        return np.broadcast_to(np.asarray(getattr(params, name)(tt, yy), dtype=float), tt.shape)

    problems = []
    for name in ('beta',):
        if np.max(np.abs(values(params_1, name) - values(params_2, name))) > tol:
            problems.append(f"{name} khác nhau")
    if np.max(np.abs(alpha(params_1, tt, yy) - alpha(params_2, tt, yy))) > tol:
        problems.append("alpha khác nhau")
    for name in ('lam', 'eta'):
        if np.any(values(params_1, name) > values(params_2, name) + tol):
            problems.append(f"{name}^1 > {name}^2")
    if params_1.q != params_2.q or params_1.T != params_2.T or params_1.a != params_2.a:
        problems.append("q, T hoặc a khác nhau")
    if len(params_1.marks) != len(params_2.marks) or np.any(params_1.weights != params_2.weights):
        problems.append("độ đo mark khác nhau")
    else:
        g1, g2 = params_1.gammas(tt, yy), params_2.gammas(tt, yy)
        if np.any(g1 > g2):
            problems.append("gamma^1 > gamma^2")
    if problems:
        raise CoefficientOrderError("Không thỏa thứ tự hệ số: " + "; ".join(problems))


def comparison_harness(params_1: ModelParams, params_2: ModelParams, grid: Grid, M: float,
                       settings: SchemeSettings = SchemeSettings(),
                       tau_mono: Optional[float] = None) -> ComparisonVerdict:
    """
    Nguyên lý so sánh cho hệ số có thứ tự: lambda^1 <= lambda^2, eta^1 <= eta^2,
    gamma^1 <= gamma^2 (cùng beta, alpha, cùng M) => u^1 <= u^2.

    Raises:
        CoefficientOrderError: tiền điều kiện về thứ tự không thỏa
    """
    _audit_order(params_1, params_2, grid)
    if tau_mono is None:
        tau_mono = scheme_tolerance(params_2, grid, M, settings)
    first = solve_truncated(params_1, grid, M, settings)
    second = solve_truncated(params_2, grid, M, settings)
    violation = relative_violation(first.values, second.values)
    passed = violation <= tau_mono
    logger.info(f"comparison_harness: vi phạm {violation:.3g} (tau {tau_mono:.3g}) -> {'đạt' if passed else 'KHÔNG đạt'}")
    return ComparisonVerdict(max_violation=violation, tolerance=tau_mono, passed=passed,
                             surfaces=(first, second))
