#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Liquidation: chạy chiến lược thanh lý dọc theo path mô phỏng, cập nhật tồn kho
và tích lũy ba thành phần chi phí (impact, risk, slippage).

Giữa hai nút, chiến lược feedback cập nhật x <- x * exp(-r dt) với r = xi / x;
TWAP dùng đúng tỉ số (T - t_{k+1}) / (T - t_k). Tại nút sự kiện, khối lệnh dark
pool khớp phần execution_fraction của tồn kho trước nhảy.
"""

import math
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import TargetZoneError
from .hjb_solver import EnvelopePair, ValueSurface, interpolate, ode_envelopes
from .model import ModelParams, execution_fraction
from .pathsim import PathBatch, ReflectedPath

logger = logging.getLogger(__name__)

OPTIMAL = "optimal-feedback"
TWAP = "twap"
NO_DARK_POOL = "no-dark-pool-feedback"
CUSTOM = "custom"
STRATEGY_TAGS = (OPTIMAL, TWAP, NO_DARK_POOL, CUSTOM)

_TIME_SLACK = 1e-12


class StrategyError(TargetZoneError):
    """Chiến lược cấu hình sai hoặc surface không phủ đủ [0, t_cut]"""


class PreconditionError(TargetZoneError):
    """Run không thỏa tiền điều kiện của phép kiểm tra"""


@dataclass(frozen=True, eq=False)
class Strategy:
    """
    tag: optimal-feedback | twap | no-dark-pool-feedback | custom.
    Feedback cần surface (no-dark-pool dùng surface của params.without_dark_pool());
    custom cần rate_fn(t, y) -> tốc độ bán trên một đơn vị tồn kho.
    """
    tag: str
    surface: Optional[ValueSurface] = None
    rate_fn: Optional[Callable] = None
    label: Optional[str] = None

    def __post_init__(self):
        if self.tag not in STRATEGY_TAGS:
            raise StrategyError(f"Tag chiến lược không hỗ trợ: '{self.tag}' (hỗ trợ: {', '.join(STRATEGY_TAGS)})")
        if self.is_feedback and self.surface is None:
            raise StrategyError(f"Chiến lược '{self.tag}' cần một ValueSurface")
        if self.tag == CUSTOM and self.rate_fn is None:
            raise StrategyError("Chiến lược custom cần rate_fn")

    @classmethod
    def optimal(cls, surface: ValueSurface) -> 'Strategy':
        return cls(OPTIMAL, surface=surface)

    @classmethod
    def twap(cls) -> 'Strategy':
        return cls(TWAP)

    @classmethod
    def no_dark_pool(cls, surface: ValueSurface) -> 'Strategy':
        return cls(NO_DARK_POOL, surface=surface)

    @classmethod
    def custom(cls, rate_fn: Callable, label: str = CUSTOM) -> 'Strategy':
        return cls(CUSTOM, rate_fn=rate_fn, label=label)

    @property
    def is_feedback(self) -> bool:
        return self.tag in (OPTIMAL, NO_DARK_POOL)

    @property
    def name(self) -> str:
        return self.label or self.tag


@dataclass(frozen=True, eq=False)
class LiquidationRun:
    """
    Một run trên [t_0, t_cut]. x[k] là tồn kho sau nhảy tại t_k; xi[k] tốc độ bán tại t_k;
    rho_exec[k] khối lệnh dark pool khớp tại t_k (0 nếu không có sự kiện);
    impact/risk/slippage là chi phí tích lũy đến t_k.
    """
    strategy: str
    q: float
    path: ReflectedPath
    times: np.ndarray
    y: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    rho_exec: np.ndarray
    impact: np.ndarray
    risk: np.ndarray
    slippage: np.ndarray

    @property
    def x0(self) -> float:
        return float(self.x[0])

    @property
    def t_cut(self) -> float:
        return float(self.times[-1])

    @property
    def residual(self) -> float:
        return float(self.x[-1])

    @property
    def cost(self) -> float:
        return float(self.impact[-1] + self.risk[-1] + self.slippage[-1])

    def cost_breakdown(self) -> Dict[str, float]:
        return {'impact': float(self.impact[-1]), 'risk': float(self.risk[-1]),
                'slippage': float(self.slippage[-1])}


@dataclass(frozen=True, eq=False)
class RunBatch:
    """Kết quả vector hóa trên một PathBatch: mảng shape (n_paths, n_points), đệm như batch"""
    strategy: str
    batch: PathBatch
    x0: float
    t_cut: float
    times: np.ndarray
    y: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    rho_exec: np.ndarray
    impact: np.ndarray
    risk: np.ndarray
    slippage: np.ndarray
    lengths: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    def _last(self, values: np.ndarray) -> np.ndarray:
        return values[np.arange(self.n_paths), self.lengths - 1]

    def terminal_inventory(self) -> np.ndarray:
        return self._last(self.x)

    def terminal_factor(self) -> np.ndarray:
        return self._last(self.y)

    def terminal_time(self) -> np.ndarray:
        return self._last(self.times)

    def costs(self) -> Dict[str, np.ndarray]:
        return {'impact': self._last(self.impact), 'risk': self._last(self.risk),
                'slippage': self._last(self.slippage)}

    def total_cost(self) -> np.ndarray:
        parts = self.costs()
        return parts['impact'] + parts['risk'] + parts['slippage']

    def run(self, i: int) -> LiquidationRun:
        n = int(self.lengths[i])
        return LiquidationRun(
            strategy=self.strategy, q=self.batch.params.q, path=self.batch.path(i), times=self.times[i, :n], y=self.y[i, :n],
            x=self.x[i, :n], xi=self.xi[i, :n], rho_exec=self.rho_exec[i, :n],
            impact=self.impact[i, :n], risk=self.risk[i, :n], slippage=self.slippage[i, :n],
        )


# =========================
# Controls
# =========================

def _surface_u(surface: ValueSurface, t, y) -> np.ndarray:
    """u tại (t, y) với y bị chặn về y_max (biên phải Neumann thuần nhất)"""
    y_clamped = np.minimum(np.asarray(y, dtype=float), surface.grid.y_max)
    u = np.asarray(interpolate(surface, t, y_clamped), dtype=float)
    if np.any(u < 0):
        raise StrategyError(f"Surface hỏng: u âm ({np.min(u):.3g}) tại t={np.min(t):.6g}")
    return u


def feedback_controls(params: ModelParams, surface: ValueSurface, t, y, x) -> Tuple[np.ndarray, np.ndarray]:
    """
    Điều khiển feedback tối ưu:
        xi    = u^{q*-1} x / eta^{q*-1}
        rho_i = u^{q*-1} x / (gamma_i^{q*-1} + u^{q*-1})   (gamma = inf => 0, gamma = 0 => x)

    Returns:
        (xi, rho) với rho có shape (n_marks, ...)
    """
    u = _surface_u(surface, t, y)
    x = np.asarray(x, dtype=float)
    rate = (u / np.asarray(params.eta(t, y), dtype=float)) ** params.p
    xi = rate * x
    rho = execution_fraction(params, t, y, u) * x
    if np.ndim(xi) == 0:
        xi = float(xi)
    return xi, rho


def _rate(params: ModelParams, strategy: Strategy, control_params: ModelParams, t, y) -> np.ndarray:
    if strategy.tag == TWAP:
        return 1.0 / (params.T - t)
    if strategy.tag == CUSTOM:
        return np.asarray(strategy.rate_fn(t, y), dtype=float) * np.ones_like(t)
    u = _surface_u(strategy.surface, t, y)
    return (u / np.asarray(control_params.eta(t, y), dtype=float)) ** params.p


def _fractions(params: ModelParams, strategy: Strategy, t, y) -> np.ndarray:
    """Tỉ lệ khớp theo mark, shape (n_marks, n); 0 cho các chiến lược không dùng dark pool"""
    n_marks = len(params.marks)
    if strategy.tag != OPTIMAL or n_marks == 0:
        return np.zeros((n_marks,) + np.shape(t))
    u = _surface_u(strategy.surface, t, y)
    return execution_fraction(params, t, y, u)


def _slippage_rate(params: ModelParams, t, y, fractions: np.ndarray, x: np.ndarray) -> np.ndarray:
    """sum_i w_i gamma_i |rho_i|^q trên mọi mark (gamma = inf với rho = 0 cho 0)"""
    if fractions.shape[0] == 0:
        return np.zeros_like(x)
    gammas = np.broadcast_to(params.gammas(t, y), fractions.shape)
    rho = np.abs(fractions * x[None, :]) ** params.q
    with np.errstate(invalid='ignore'):
        terms = np.where(fractions > 0, gammas * rho, 0.0)
    return np.tensordot(params.weights, terms, axes=1)


def _execute(params: ModelParams, strategy: Strategy, times: np.ndarray, y: np.ndarray,
             is_event: np.ndarray, mark: np.ndarray, lengths: np.ndarray, x0: float, t_cut: float):
    """Lõi vector hóa chung của run_strategy và run_batch"""
    if strategy.is_feedback and strategy.surface.t_max < t_cut - _TIME_SLACK * max(1.0, t_cut):
        raise StrategyError(
            f"Surface chỉ phủ [0, {strategy.surface.t_max}], không đủ cho t_cut={t_cut}")
    if strategy.tag == TWAP and t_cut > params.T:
        raise StrategyError(f"TWAP cần t_cut <= T, nhận {t_cut}")
    control_params = params.without_dark_pool() if strategy.tag == NO_DARK_POOL else params

    n_paths, n_points = times.shape
    within = times <= t_cut + _TIME_SLACK * max(1.0, t_cut)
    run_lengths = np.minimum(lengths, within.sum(axis=1)) if n_paths else lengths
    x = np.zeros((n_paths, n_points))
    xi = np.zeros((n_paths, n_points))
    rho_exec = np.zeros((n_paths, n_points))
    impact = np.zeros((n_paths, n_points))
    risk = np.zeros((n_paths, n_points))
    slippage = np.zeros((n_paths, n_points))
    x[:, 0] = x0
    q = params.q
    live = np.arange(n_points)[None, :] < run_lengths[:, None]

    # điều khiển chỉ được đánh giá trên [0, t_cut]; các nút sau t_cut không còn hoạt động
    control_times = np.minimum(times, t_cut)
    for k in range(n_points):
        t, yk, xk = times[:, k], y[:, k], x[:, k]
        tc = control_times[:, k]
        active_point = live[:, k]
        if strategy.tag == TWAP:
            open_point = active_point & (t < params.T)
            rate = np.where(open_point, _rate(params, strategy, control_params, np.where(open_point, t, 0.0), yk), 0.0)
        else:
            rate = np.where(active_point, _rate(params, strategy, control_params, tc, yk), 0.0)
        xi[:, k] = rate * xk
        if k == n_points - 1:
            break

        step = np.where(live[:, k + 1], times[:, k + 1] - t, 0.0)
        fractions = _fractions(params, strategy, tc, yk)
        impact[:, k + 1] = impact[:, k] + np.asarray(params.eta(t, yk)) * np.abs(xi[:, k]) ** q * step
        risk[:, k + 1] = risk[:, k] + np.asarray(params.lam(t, yk)) * np.abs(xk) ** q * step
        slippage[:, k + 1] = slippage[:, k] + _slippage_rate(params, t, yk, fractions, xk) * step

        if strategy.tag == TWAP:
            with np.errstate(divide='ignore', invalid='ignore'):
                ratio = np.where(step > 0, (params.T - times[:, k + 1]) / (params.T - t), 1.0)
            x_minus = xk * ratio
        else:
            x_minus = xk * np.exp(-rate * step)

        jumping = is_event[:, k + 1] & live[:, k + 1]
        if np.any(jumping):
            next_fractions = _fractions(params, strategy, control_times[:, k + 1], y[:, k + 1])
            if next_fractions.shape[0]:
                chosen = next_fractions[np.maximum(mark[:, k + 1], 0), np.arange(n_paths)]
                executed = np.where(jumping, chosen * x_minus, 0.0)
                rho_exec[:, k + 1] = executed
                x_minus = x_minus - executed
        x[:, k + 1] = x_minus

    return x, xi, rho_exec, impact, risk, slippage, run_lengths


def run_strategy(params: ModelParams, strategy: Strategy, path: ReflectedPath,
                 x0: float, t_cut: float) -> LiquidationRun:
    """
    Chạy một chiến lược trên một path đến t_cut (nút cuối <= t_cut).

    Raises:
        StrategyError: surface không phủ [0, t_cut]
    """
    arrays = _execute(params, strategy, path.times[None, :], path.y[None, :], path.is_event[None, :],
                      path.mark[None, :], np.array([path.times.size]), x0, t_cut)
    x, xi, rho_exec, impact, risk, slippage, run_lengths = arrays
    n = int(run_lengths[0])
    return LiquidationRun(
        strategy=strategy.name, q=params.q, path=path, times=path.times[:n], y=path.y[:n], x=x[0, :n],
        xi=xi[0, :n], rho_exec=rho_exec[0, :n], impact=impact[0, :n], risk=risk[0, :n],
        slippage=slippage[0, :n],
    )


def run_batch(params: ModelParams, strategy: Strategy, batch: PathBatch,
              x0: float, t_cut: float) -> RunBatch:
    """Chạy chiến lược trên toàn bộ batch (cùng path cho mọi chiến lược => common random numbers)"""
    x, xi, rho_exec, impact, risk, slippage, run_lengths = _execute(
        params, strategy, batch.times, batch.y, batch.is_event, batch.mark, batch.lengths, x0, t_cut)
    logger.debug(f"run_batch {strategy.name}: {batch.n_paths} path, t_cut={t_cut}")
    return RunBatch(strategy=strategy.name, batch=batch, x0=float(x0), t_cut=float(t_cut),
                    times=batch.times, y=batch.y, x=x, xi=xi, rho_exec=rho_exec, impact=impact,
                    risk=risk, slippage=slippage, lengths=run_lengths)


# =========================
# Checks
# =========================

@dataclass
class InventoryVerdict:
    """Kết quả kiểm tra theo từng bước; worst_margin < 0 nghĩa là vi phạm"""
    name: str
    passed: bool
    worst_margin: float
    n_checked: int

    def to_dict(self) -> Dict:
        return {'name': self.name, 'passed': self.passed, 'worst_margin': self.worst_margin,
                'n_checked': self.n_checked}


def closed_form_inventory(params: ModelParams, surface: ValueSurface, path: ReflectedPath,
                          x0: float, t_cut: Optional[float] = None) -> np.ndarray:
    """
    Tồn kho tối ưu dạng tường minh trên lưới của path:
        x*_t = x0 * exp(-int_0^t (u/eta)^{q*-1} ds) * prod_{sự kiện <= t} (1 - tỉ lệ khớp)
    với tích phân điểm trái.
    """
    t_cut = path.times[-1] if t_cut is None else t_cut
    keep = path.times <= t_cut + _TIME_SLACK * max(1.0, t_cut)
    times, ys = path.times[keep], path.y[keep]
    u = _surface_u(surface, times, ys)
    rates = (u / np.asarray(params.eta(times, ys), dtype=float)) ** params.p
    integral = np.concatenate([[0.0], np.cumsum(rates[:-1] * np.diff(times))])
    factors = np.ones(times.size)
    events = np.nonzero(path.is_event[keep])[0]
    if events.size and params.marks:
        fractions = execution_fraction(params, times[events], ys[events], u[events])
        factors[events] = 1.0 - fractions[path.mark[keep][events], np.arange(events.size)]
    return x0 * np.exp(-integral) * np.cumprod(factors)


def power_law_decay_bound(x0: float, T: float, t, c0: float, Lambda: float, q: float):
    """|x0| ((T - t)/T)^{(c0/Lambda)^{q*-1}}"""
    q_star = q / (q - 1.0)
    exponent = (c0 / Lambda) ** (q_star - 1.0)
    value = abs(x0) * ((T - np.asarray(t, dtype=float)) / T) ** exponent
    return float(value) if np.ndim(value) == 0 else value


def decay_envelope(run: LiquidationRun, params: ModelParams, surface: ValueSurface,
                   envelopes: Optional[EnvelopePair] = None, envelope_slack: float = 0.0) -> np.ndarray:
    """
    |x0| * exp(-sum (lower(s_j)/Lambda)^{q*-1} dt_j) trên lưới của run, với s_j là nút
    thời gian của surface ngay trước t_j (u nội suy tại t_j không nhỏ hơn lower(s_j)).

    envelope_slack: dung sai tương đối của bao dưới đã kiểm tra trên surface
    (dùng (lower - slack) / (1 + slack) thay cho lower).
    """
    if envelopes is None:
        level = surface.rung_level if surface.rung_level is not None else math.inf
        envelopes = ode_envelopes(params, level)
    times = run.times
    index = np.searchsorted(surface.times, times, side='right') - 1
    anchors = surface.times[np.clip(index, 0, surface.times.size - 1)]
    lower = np.asarray(envelopes.lower(anchors), dtype=float) * np.ones_like(times)
    lower = np.maximum(0.0, (lower - envelope_slack) / (1.0 + envelope_slack))
    rates = (lower / params.Lambda) ** params.p
    integral = np.concatenate([[0.0], np.cumsum(rates[:-1] * np.diff(times))])
    return abs(run.x0) * np.exp(-integral)


def terminal_decay_check(run: LiquidationRun, params: ModelParams, surface: ValueSurface,
                         envelopes: Optional[EnvelopePair] = None, rtol: float = 1e-9,
                         envelope_slack: float = 0.0) -> InventoryVerdict:
    """|x_t| <= bao suy giảm tại mọi bước (run phải đến từ feedback tối ưu)"""
    bound = decay_envelope(run, params, surface, envelopes, envelope_slack)
    margins = (bound - np.abs(run.x)) / (1.0 + bound)
    worst = float(np.min(margins)) if margins.size else 0.0
    return InventoryVerdict("decay", worst >= -rtol, worst, int(margins.size))


def _residual_at(params: ModelParams, strategy: Strategy, paths: Union[ReflectedPath, PathBatch],
                 x0: float, t_cut: float) -> Tuple[float, np.ndarray]:
    """(trung bình |x_{t_cut}| trên các path, số nút đã chạy của từng path)"""
    if isinstance(paths, ReflectedPath):
        run = run_strategy(params, strategy, paths, x0, t_cut)
        return abs(run.residual), np.array([run.times.size])
    runs = run_batch(params, strategy, paths, x0, t_cut)
    residual = float(np.mean(np.abs(runs.terminal_inventory()))) if runs.n_paths else 0.0
    return residual, runs.lengths


def residual_trend_check(params: ModelParams, strategy: Strategy, paths: Union[ReflectedPath, PathBatch],
                         x0: float, t_cuts: Sequence[float]) -> Tuple[InventoryVerdict, List[float]]:
    """
    Tồn kho dư (trung bình |x_{t_cut}| trên batch) phải giảm ngặt khi t_cut tiến về T;
    hai mức liên tiếp cùng bằng 0 được coi là đạt.

    Raises:
        PreconditionError: hai t_cut liên tiếp rơi vào cùng một nút cuối trên lưới path
    """
    t_cuts = sorted(float(t) for t in t_cuts)
    residuals, ends = [], []
    for t_cut in t_cuts:
        residual, lengths = _residual_at(params, strategy, paths, x0, t_cut)
        residuals.append(residual)
        ends.append(lengths)
    for (first, second), (a, b) in zip(zip(t_cuts, t_cuts[1:]), zip(ends, ends[1:])):
        if np.any(a == b):
            raise PreconditionError(
                f"t_cut {first:.6g} và {second:.6g} dừng ở cùng một nút; cần bước thời gian nhỏ hơn {second - first:.3g}")

    current, following = np.array(residuals[:-1]), np.array(residuals[1:])
    strict = (following < current) | ((following == 0.0) & (current == 0.0))
    worst = float(np.min(current - following)) if current.size else 0.0
    logger.info(f"residual_trend_check: t_cuts={t_cuts}, residuals={residuals}")
    return InventoryVerdict("decay-trend", bool(np.all(strict)), worst, len(residuals)), residuals


def holder_inventory_check(run: LiquidationRun, rtol: float = 1e-9) -> InventoryVerdict:
    """
    |x_t - x_{t_cut}|^q <= (t_cut - t)^{q-1} * sum_{t_j >= t} |xi_j|^q dt_j tại mọi nút
    (bất đẳng thức Hölder theo đường, C = 1; bằng dạng gốc khi x_{t_cut} = 0).

    Raises:
        PreconditionError: run có khối lệnh dark pool (có bước nhảy)
    """
    if np.any(run.rho_exec != 0):
        raise PreconditionError("holder_inventory_check cần run không có khối lệnh dark pool")
    times = run.times
    if times.size < 2:
        return InventoryVerdict("holder", True, 0.0, int(times.size))
    q = run.q
    dt = np.diff(times)
    tail_energy = np.concatenate([np.cumsum((np.abs(run.xi[:-1]) ** q * dt)[::-1])[::-1], [0.0]])
    lhs = np.abs(run.x - run.x[-1]) ** q
    rhs = (times[-1] - times) ** (q - 1.0) * tail_energy
    margins = (rhs - lhs) / (1.0 + rhs)
    worst = float(np.min(margins))
    return InventoryVerdict("holder", worst >= -rtol, worst, int(times.size))
