#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Verification: kiểm chứng Monte Carlo ở quy mô bàn làm việc.

- verify_value: đồng nhất thức quy hoạch động tại t_cut < T
    u_0(y0)|x0|^q = E[chi phí trên [0, t_cut] + u_{t_cut}(y)|x_{t_cut}|^q]
- verify_dominance: feedback tối ưu không tệ hơn các chiến lược cơ sở (common random numbers)
- verify_feynman_kac: u^M_t(y) = E[u^M_tau(y_tau) + int_t^tau hamiltonian_zeroth ds]
- run_property_suites: chạy các suite thuộc tính trên một catalog fixture, có gate validate

Dung sai rời rạc hóa = 3 x sai số surface đo được + 3 x ước lượng sai số yếu Euler (chia đôi bước).
"""

import json
import math
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import TargetZoneError, __version__
from .hjb_solver import (
    SCHEME_ERROR_FACTOR, SCHEME_ERROR_FLOOR, EnvelopePair, Grid, SchemeSettings, SolverError, ValueSurface,
    boundary_sensitivity, comparison_harness, envelope_violation, estimate_scheme_error, interpolate,
    neumann_residual, ode_envelopes, solve_ladder, solve_truncated,
)
from .coefficients import Constant
from .liquidation import (
    Strategy, holder_inventory_check, run_batch, residual_trend_check, terminal_decay_check,
)
from .model import ModelParams, hamiltonian_zeroth, validate
from .pathsim import PathBatch, coarsen_batch, occupation_check, simulate_batch

logger = logging.getLogger(__name__)

REPORT_VERSION = 1
# sai lệch tương đối chấp nhận khi đối chiếu u_0 với cặp bao (surface không kèm error_estimate)
ENVELOPE_SLACK = 1e-3

# tồn kho dư đo tại các t_cut = fraction * T; bước path không quá TREND_STEP_FRACTION * T
TREND_FRACTIONS = (0.9, 0.99, 0.999)
TREND_STEP_FRACTION = 5e-4
VALUE_HORIZON_FRACTIONS = (1.0, 0.5)

SUITES = ('validate', 'monotonicity', 'envelope', 'comparison', 'domain', 'skorokhod', 'decay', 'holder')
MONTE_CARLO_SUITES = ('value', 'dominance', 'feynman_kac')
SUITE_EXIT_CODES = {
    'validate': 2, 'monotonicity': 3, 'envelope': 5, 'comparison': 6, 'skorokhod': 7,
    'decay': 8, 'holder': 9, 'value': 10, 'dominance': 11, 'feynman_kac': 12, 'domain': 13,
}

PASS, FAIL, SKIPPED = "pass", "fail", "skipped"


class InsufficientPathsError(TargetZoneError):
    """Sai số chuẩn quá lớn so với độ phân giải yêu cầu"""


class FkPointError(TargetZoneError):
    """Điểm (t, y) của phép kiểm Feynman–Kac nằm ngoài lưới của surface"""


# =========================
# Reports
# =========================

@dataclass
class CostReport:
    """Ước lượng Monte Carlo của tổng chi phí một chiến lược"""
    strategy: str
    n_paths: int
    mean_cost: float
    decomposition: Dict[str, float]
    terminal_term: float
    total: float
    stderr: float
    reference: Optional[float] = None
    allowance: float = 0.0
    z_score: Optional[float] = None
    margin: Optional[float] = None
    passed: Optional[bool] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'CostReport':
        return cls(**dict(data))


@dataclass
class FkReport:
    """Hai vế của biểu diễn Feynman–Kac tại từng điểm (t, y)"""
    tau: float
    points: List[Tuple[float, float]]
    left: List[float]
    right: List[float]
    stderr: List[float]
    z_scores: List[float]
    allowance: List[float]
    passed: bool

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['points'] = [list(p) for p in self.points]
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'FkReport':
        data = dict(data)
        data['points'] = [tuple(p) for p in data['points']]
        return cls(**data)


@dataclass
class SuiteResult:
    """Một dòng của báo cáo tổng hợp"""
    fixture: str
    suite: str
    statistic: Optional[float]
    tolerance: Optional[float]
    verdict: str
    detail: str = ""

    @property
    def failed(self) -> bool:
        return self.verdict == FAIL

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'SuiteResult':
        return cls(**dict(data))


@dataclass
class AggregateReport:
    """Báo cáo JSON có version; exit_code = mã của suite thất bại đầu tiên"""
    results: List[SuiteResult] = field(default_factory=list)
    version: int = REPORT_VERSION
    tool_version: str = __version__

    @property
    def passed(self) -> bool:
        return not any(r.failed for r in self.results)

    def first_failure(self) -> Optional[SuiteResult]:
        return next((r for r in self.results if r.failed), None)

    @property
    def exit_code(self) -> int:
        failure = self.first_failure()
        return 0 if failure is None else SUITE_EXIT_CODES.get(failure.suite, 1)

    def to_dict(self) -> Dict[str, Any]:
        return {'version': self.version, 'tool_version': self.tool_version, 'passed': self.passed,
                'results': [r.to_dict() for r in self.results]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'AggregateReport':
        return cls(results=[SuiteResult.from_dict(r) for r in data.get('results', [])],
                   version=int(data.get('version', REPORT_VERSION)),
                   tool_version=str(data.get('tool_version', __version__)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False, allow_nan=True)

    @classmethod
    def from_json(cls, text: str) -> 'AggregateReport':
        return cls.from_dict(json.loads(text))


# =========================
# Helpers
# =========================

def _stderr(samples: np.ndarray) -> float:
    return float(np.std(samples, ddof=1) / np.sqrt(samples.size)) if samples.size > 1 else 0.0


def _terminal_term(params: ModelParams, surface: ValueSurface, runs) -> np.ndarray:
    """u_{t_cut}(y_{t_cut}) |x_{t_cut}|^q cho mỗi path (y chặn về y_max)"""
    y_end = np.minimum(runs.terminal_factor(), surface.grid.y_max)
    t_end = np.minimum(runs.terminal_time(), surface.t_max)
    u_end = np.asarray(interpolate(surface, t_end, y_end), dtype=float)
    return u_end * np.abs(runs.terminal_inventory()) ** params.q


def _totals(params: ModelParams, surface: ValueSurface, strategy: Strategy, batch: PathBatch,
            x0: float, t_cut: float):
    runs = run_batch(params, strategy, batch, x0, t_cut)
    costs = runs.costs()
    terminal = _terminal_term(params, surface, runs)
    return runs.total_cost() + terminal, costs, terminal


def _surface_allowance(surface: ValueSurface, scale: float) -> float:
    error = surface.error_estimate or 0.0
    return 3.0 * error * (1.0 + abs(scale))


# =========================
# Monte Carlo identities
# =========================

def verify_value(params: ModelParams, surface: ValueSurface, x0: float, y0: float, n_paths: int,
                 t_cut: float, dt: float, seed: int, first_stream: int = 0,
                 resolution: Optional[float] = None, envelopes: Optional[EnvelopePair] = None) -> CostReport:
    """
    Đồng nhất thức quy hoạch động tại t_cut: chạy feedback tối ưu trên n_paths path
    của [0, t_cut] và so sánh với u_0(y0)|x0|^q.

    Args:
        resolution: 3 x stderr tối đa chấp nhận được (mặc định 0.25 * (1 + |tham chiếu|))
        envelopes: nếu có, u_0(y0) phải nằm trong [lower(0), upper(0)] (sai lệch tối đa max(allowance surface, ENVELOPE_SLACK))

    Raises:
        InsufficientPathsError: n_paths < 1 hoặc 3 x stderr vượt resolution
    """
    if n_paths < 1:
        raise InsufficientPathsError("verify_value cần ít nhất một path")
    u0 = float(interpolate(surface, 0.0, min(y0, surface.grid.y_max)))
    reference = u0 * abs(x0) ** params.q
    batch = simulate_batch(params, y0, dt, n_paths, seed, first_stream, horizon=t_cut)
    strategy = Strategy.optimal(surface)
    totals, costs, terminal = _totals(params, surface, strategy, batch, x0, t_cut)
    coarse_totals, _, _ = _totals(params, surface, strategy, coarsen_batch(batch), x0, t_cut)

    mean = float(np.mean(totals))
    stderr = _stderr(totals)
    weak_error = abs(mean - float(np.mean(coarse_totals)))
    allowance = _surface_allowance(surface, u0) * abs(x0) ** params.q + 3.0 * weak_error
    limit = 0.25 * (1.0 + abs(reference)) if resolution is None else resolution
    if 3.0 * stderr > limit:
        raise InsufficientPathsError(
            f"3 x stderr = {3.0 * stderr:.3g} vượt độ phân giải {limit:.3g}; tăng n_paths (hiện {n_paths})")

    difference = mean - reference
    z_score = difference / stderr if stderr > 0 else (0.0 if abs(difference) <= allowance else math.inf)
    decomposition = {name: float(np.mean(values)) for name, values in costs.items()}
    passed = abs(difference) <= 3.0 * stderr + allowance
    if envelopes is not None:
        slack = max(_surface_allowance(surface, u0), ENVELOPE_SLACK * (1.0 + u0))
        lower, upper = float(envelopes.lower(0.0)), float(envelopes.upper(0.0))
        if not lower - slack <= u0 <= upper + slack:
            logger.warning(f"verify_value: u_0(y0)={u0:.6g} nằm ngoài cặp bao [{lower:.6g}, {upper:.6g}]")
            passed = False
    logger.info(f"verify_value t_cut={t_cut}: MC={mean:.6g} ± {stderr:.3g}, tham chiếu={reference:.6g}, "
                f"allowance={allowance:.3g} -> {'đạt' if passed else 'KHÔNG đạt'}")
    return CostReport(
        strategy=strategy.name, n_paths=n_paths, mean_cost=float(sum(decomposition.values())),
        decomposition=decomposition, terminal_term=float(np.mean(terminal)), total=mean, stderr=stderr,
        reference=reference, allowance=allowance, z_score=float(z_score),
        margin=float((3.0 * stderr + allowance - abs(difference)) / stderr) if stderr > 0 else None,
        passed=bool(passed),
    )


def verify_value_horizons(params: ModelParams, surface: ValueSurface, x0: float, y0: float, n_paths: int,
                          t_cuts: Sequence[float], dt: float, seed: int) -> List[CostReport]:
    """verify_value trên một dãy t_cut giảm dần; cùng seed cho mọi horizon"""
    return [verify_value(params, surface, x0, y0, n_paths, t_cut, dt, seed)
            for t_cut in sorted(t_cuts, reverse=True)]


def verify_dominance(params: ModelParams, surface: ValueSurface, strategies: Sequence[Strategy],
                     x0: float, y0: float, n_paths: int, t_cut: float, dt: float,
                     seed: int) -> List[CostReport]:
    """
    So sánh từng cặp trên CÙNG một tập path. Tổng = chi phí + u_{t_cut}|x_{t_cut}|^q với u
    là surface tối ưu.

    Chi phí tích phân điểm trái lệch bậc một theo dt và lệch khác nhau giữa các chiến lược,
    nên mỗi mẫu được ngoại suy Richardson 2 * (bước dt) - (bước 2 dt, cùng nhiễu). z của một
    chiến lược là z của hiệu ghép cặp ngoại suy (tối ưu - chiến lược); allowance ghi độ lệch
    |hiệu ghép cặp(dt) - hiệu ghép cặp(2 dt)| để tham khảo.

    Returns:
        Danh sách CostReport sắp tăng dần theo tổng ngoại suy (total)
    """
    if n_paths < 1:
        raise InsufficientPathsError("verify_dominance cần ít nhất một path")
    batch = simulate_batch(params, y0, dt, n_paths, seed, horizon=t_cut)
    coarse = coarsen_batch(batch)
    optimal = Strategy.optimal(surface)
    optimal_fine, _, _ = _totals(params, surface, optimal, batch, x0, t_cut)
    optimal_coarse, _, _ = _totals(params, surface, optimal, coarse, x0, t_cut)

    reports = []
    for strategy in strategies:
        totals, costs, terminal = _totals(params, surface, strategy, batch, x0, t_cut)
        coarse_totals, _, _ = _totals(params, surface, strategy, coarse, x0, t_cut)
        extrapolated = 2.0 * totals - coarse_totals
        paired_fine = optimal_fine - totals
        paired_coarse = optimal_coarse - coarse_totals
        paired = 2.0 * paired_fine - paired_coarse
        paired_stderr = _stderr(paired)
        mean_paired = float(np.mean(paired))
        if paired_stderr > 0:
            z_score = mean_paired / paired_stderr
        else:
            z_score = 0.0 if mean_paired == 0 else math.copysign(math.inf, mean_paired)
        decomposition = {name: float(np.mean(values)) for name, values in costs.items()}
        reports.append(CostReport(
            strategy=strategy.name, n_paths=n_paths, mean_cost=float(sum(decomposition.values())),
            decomposition=decomposition, terminal_term=float(np.mean(terminal)),
            total=float(np.mean(extrapolated)), stderr=_stderr(extrapolated),
            allowance=abs(float(np.mean(paired_fine)) - float(np.mean(paired_coarse))),
            z_score=float(z_score), margin=float(-z_score), passed=bool(z_score <= 3.0),
        ))
    reports.sort(key=lambda r: r.total)
    logger.info("verify_dominance: " + ", ".join(f"{r.strategy}={r.total:.6g} (z={r.z_score:.2f})" for r in reports))
    return reports


def verify_feynman_kac(params: ModelParams, surface_M: ValueSurface, points: Sequence[Tuple[float, float]],
                       n_paths: int, dt: float, seed: int, tau: Optional[float] = None) -> FkReport:
    """
    u^M_t(y) = E[u^M_tau(y_tau) + int_t^tau hamiltonian_zeroth(s, y_s, u^M_s(y_s)) ds]
    (tích phân hình thang dọc path; local time không đóng góp vì Du(a) = 0).

    Args:
        tau: horizon chung, mặc định t_max của surface (phải < T nếu surface kỳ dị)

    Raises:
        FkPointError: điểm ngoài lưới hoặc t > tau
    """
    tau = surface_M.t_max if tau is None else float(tau)
    if not 0.0 <= tau <= surface_M.t_max:
        raise FkPointError(f"tau={tau} ngoài [0, {surface_M.t_max}]")
    left, right, errors, z_scores, allowances = [], [], [], [], []
    passed = True
    for i, (t, y) in enumerate(points):
        if not (0.0 <= t <= tau and surface_M.grid.a <= y <= surface_M.grid.y_max):
            raise FkPointError(f"Điểm ({t}, {y}) nằm ngoài [0, {tau}] x [{surface_M.grid.a}, {surface_M.grid.y_max}]")
        lhs = float(interpolate(surface_M, t, y))
        batch = simulate_batch(params, y, dt, n_paths, seed, first_stream=i * n_paths, t0=t, horizon=tau)
        samples = _fk_samples(params, surface_M, batch)
        coarse = _fk_samples(params, surface_M, coarsen_batch(batch)) if t < tau else samples
        mean = float(np.mean(samples)) if samples.size else lhs
        stderr = _stderr(samples)
        weak_error = abs(mean - float(np.mean(coarse))) if coarse.size else 0.0
        allowance = _surface_allowance(surface_M, lhs) + 3.0 * weak_error
        difference = mean - lhs
        ok = abs(difference) <= 4.0 * stderr + allowance + 1e-12 * (1.0 + abs(lhs))
        z = difference / stderr if stderr > 0 else (0.0 if ok else math.inf)
        passed = passed and ok
        left.append(lhs)
        right.append(mean)
        errors.append(stderr)
        z_scores.append(float(z))
        allowances.append(float(allowance))
    logger.info(f"verify_feynman_kac tau={tau}: z={['%.2f' % z for z in z_scores]} -> {'đạt' if passed else 'KHÔNG đạt'}")
    return FkReport(tau=tau, points=[(float(t), float(y)) for t, y in points], left=left, right=right,
                    stderr=errors, z_scores=z_scores, allowance=allowances, passed=bool(passed))


def _fk_samples(params: ModelParams, surface: ValueSurface, batch: PathBatch) -> np.ndarray:
    times = np.minimum(batch.times, surface.t_max)
    ys = np.minimum(batch.y, surface.grid.y_max)
    u = np.asarray(interpolate(surface, times, ys), dtype=float)
    drift = hamiltonian_zeroth(params, times, ys, u)
    integral = np.sum(0.5 * (drift[:, 1:] + drift[:, :-1]) * np.diff(times, axis=1), axis=1)
    return u[:, -1] + integral


# =========================
# Property suites
# =========================

@dataclass
class SuiteSettings:
    """Tham số chung cho run_property_suites"""
    seed: int = 20240601
    dt: float = 0.01
    n_paths_small: int = 200
    n_paths: int = 2000
    tau_mono: Optional[float] = None
    eps_ladder: float = 1e-3
    include_monte_carlo: bool = False
    scheme: SchemeSettings = field(default_factory=SchemeSettings)


def _catalog_entry(fixture) -> Tuple[ModelParams, Grid]:
    return fixture.params, fixture.grid()


def _result(fixture: str, suite: str, statistic, tolerance, passed: bool, detail: str = "") -> SuiteResult:
    return SuiteResult(fixture, suite, None if statistic is None else float(statistic),
                       None if tolerance is None else float(tolerance), PASS if passed else FAIL, detail)


def _suite_validate(fixture, settings, state):
    params, grid = _catalog_entry(fixture)
    violations = validate(params, grid.t_grid[:: max(1, grid.t_grid.size // 20)], grid.y_nodes)
    kinds = sorted({v.name for v in violations})
    return _result(fixture.name, 'validate', len(violations), 0, not violations, ", ".join(kinds))


def _suite_monotonicity(fixture, settings, state):
    params, grid = _catalog_entry(fixture)
    tau = settings.tau_mono
    if tau is None:
        error = estimate_scheme_error(params, grid, fixture.M_schedule[-1], settings.scheme)
        tau = max(SCHEME_ERROR_FACTOR * error, SCHEME_ERROR_FLOOR)
        state['scheme_error'] = error
    state['tau'] = tau
    try:
        ladder = solve_ladder(params, grid, fixture.M_schedule, settings.scheme, tau_mono=tau)
    except SolverError as e:
        return _result(fixture.name, 'monotonicity', getattr(e, 'max_violation', None), tau, False, str(e))
    state['ladder'] = ladder
    return _result(fixture.name, 'monotonicity', ladder.max_violation, tau, True,
                   f"gap={ladder.gap}" if ladder.gap is not None else "single rung")


def _suite_envelope(fixture, settings, state):
    params, _ = _catalog_entry(fixture)
    ladder = state.get('ladder')
    if ladder is None:
        return SuiteResult(fixture.name, 'envelope', None, None, SKIPPED, "không có thang")
    worst = max(envelope_violation(rung, ode_envelopes(params, float(rung.truncation_level)))
                for rung in ladder)
    return _result(fixture.name, 'envelope', worst, state['tau'], worst <= state['tau'])


def _suite_comparison(fixture, settings, state):
    params, grid = _catalog_entry(fixture)
    upper = params.replace(lam=Constant(params.Lambda))
    verdict = comparison_harness(params, upper, grid, fixture.M_schedule[0], settings.scheme, tau_mono=state['tau'])
    return _result(fixture.name, 'comparison', verdict.max_violation, verdict.tolerance, verdict.passed,
                   "lambda^2 = Lambda")


def _suite_domain(fixture, settings, state):
    params, grid = _catalog_entry(fixture)
    verdict = boundary_sensitivity(params, grid, fixture.M_schedule[-1], settings.scheme)
    ladder = state.get('ladder')
    detail = f"y_max {verdict.y_max:g} -> {verdict.wide_y_max:g}"
    if ladder is not None:
        detail += f", Neumann residual {neumann_residual(ladder[-1]):.3g} (h={grid.h:.3g})"
    return _result(fixture.name, 'domain', verdict.change, verdict.tolerance, verdict.passed, detail)


def _suite_skorokhod(fixture, settings, state):
    params, _ = _catalog_entry(fixture)
    batch = simulate_batch(params, fixture.start, settings.dt, settings.n_paths_small, settings.seed)
    stats = occupation_check(batch)
    below = float(np.max(params.a - batch.y)) if batch.n_paths else 0.0
    statistic = max(stats.max_product, below)
    return _result(fixture.name, 'skorokhod', statistic, 0.0, statistic <= 0.0)


def _top_surface(state) -> Optional[ValueSurface]:
    ladder = state.get('ladder')
    return ladder[-1] if ladder is not None else None


def _suite_decay(fixture, settings, state):
    params, _ = _catalog_entry(fixture)
    surface = _top_surface(state)
    if surface is None:
        return SuiteResult(fixture.name, 'decay', None, None, SKIPPED, "không có thang")
    strategy = Strategy.optimal(surface)
    batch = simulate_batch(params, fixture.start, settings.dt, settings.n_paths_small, settings.seed)
    runs = run_batch(params, strategy, batch, fixture.x0, fixture.t_cut)
    margins = [terminal_decay_check(runs.run(i), params, surface, envelope_slack=state['tau']).worst_margin
               for i in range(runs.n_paths)]
    worst = min(margins) if margins else 0.0

    t_cuts = [fraction * params.T for fraction in TREND_FRACTIONS]
    trend_dt = min(settings.dt, TREND_STEP_FRACTION * params.T)
    trend_batch = simulate_batch(params, fixture.start, trend_dt, settings.n_paths_small, settings.seed,
                                 horizon=t_cuts[-1])
    trend, residuals = residual_trend_check(params, strategy, trend_batch, fixture.x0, t_cuts)
    passed = worst >= -1e-9 and trend.passed
    return _result(fixture.name, 'decay', worst, 0.0, passed,
                   "residuals=" + ", ".join(f"{r:.3g}" for r in residuals))


def _suite_holder(fixture, settings, state):
    params, _ = _catalog_entry(fixture)
    surface = _top_surface(state)
    batch = simulate_batch(params, fixture.start, settings.dt, settings.n_paths_small, settings.seed)
    strategies = [(Strategy.twap(), params.T)]
    if surface is not None:
        strategies.append((Strategy.no_dark_pool(surface), fixture.t_cut))
    worst = math.inf
    for strategy, t_cut in strategies:
        runs = run_batch(params, strategy, batch, fixture.x0, t_cut)
        for i in range(runs.n_paths):
            worst = min(worst, holder_inventory_check(runs.run(i)).worst_margin)
    worst = 0.0 if math.isinf(worst) else worst
    return _result(fixture.name, 'holder', worst, 0.0, worst >= -1e-9)


def _suite_value(fixture, settings, state):
    params, grid = _catalog_entry(fixture)
    surface = _top_surface(state)
    if surface is None:
        return SuiteResult(fixture.name, 'value', None, None, SKIPPED, "không có thang")
    surface = surface.with_metadata(error_estimate=state.get('scheme_error', 0.0))
    horizons = [fraction * fixture.t_cut for fraction in VALUE_HORIZON_FRACTIONS]
    reports = verify_value_horizons(params, surface, fixture.x0, fixture.start, settings.n_paths,
                                    horizons, settings.dt, settings.seed)
    worst = max(abs(r.z_score) for r in reports)
    detail = "; ".join(f"t_cut={t_cut:.4g}: MC={r.total:.6g}, ref={r.reference:.6g}"
                       for t_cut, r in zip(sorted(horizons, reverse=True), reports))
    return _result(fixture.name, 'value', worst, 3.0, all(r.passed for r in reports), detail)


def _suite_dominance(fixture, settings, state):
    params, grid = _catalog_entry(fixture)
    surface = _top_surface(state)
    if surface is None:
        return SuiteResult(fixture.name, 'dominance', None, None, SKIPPED, "không có thang")
    M = float(surface.truncation_level)
    baselines = [Strategy.twap()]
    if params.marks:
        baselines.append(Strategy.no_dark_pool(solve_truncated(params.without_dark_pool(), grid, M, settings.scheme)))
    reports = verify_dominance(params, surface, baselines, fixture.x0, fixture.start, settings.n_paths,
                               fixture.t_cut, settings.dt, settings.seed)
    worst = max(r.z_score for r in reports)
    return _result(fixture.name, 'dominance', worst, 3.0, all(r.passed for r in reports),
                   ", ".join(f"{r.strategy}: z={r.z_score:.2f}" for r in reports))


def _suite_feynman_kac(fixture, settings, state):
    params, _ = _catalog_entry(fixture)
    ladder = state.get('ladder')
    if ladder is None:
        return SuiteResult(fixture.name, 'feynman_kac', None, None, SKIPPED, "không có thang")
    surface = ladder[0].with_metadata(error_estimate=state.get('scheme_error', 0.0))
    points = [(0.0, params.a), (0.0, params.a + 1.0)]
    report = verify_feynman_kac(params, surface, points, settings.n_paths, settings.dt, settings.seed,
                                tau=0.5 * params.T)
    worst = max(abs(z) for z in report.z_scores)
    return _result(fixture.name, 'feynman_kac', worst, 4.0, report.passed)


_SUITE_RUNNERS: Dict[str, Callable] = {
    'validate': _suite_validate,
    'monotonicity': _suite_monotonicity,
    'envelope': _suite_envelope,
    'comparison': _suite_comparison,
    'domain': _suite_domain,
    'skorokhod': _suite_skorokhod,
    'decay': _suite_decay,
    'holder': _suite_holder,
    'value': _suite_value,
    'dominance': _suite_dominance,
    'feynman_kac': _suite_feynman_kac,
}


def run_property_suites(params_catalog: Mapping[str, Any],
                        settings: Optional[SuiteSettings] = None) -> AggregateReport:
    """
    Chạy các suite cho từng fixture của catalog. Nếu validate thất bại, các suite
    còn lại của fixture đó được đánh dấu skipped.

    Args:
        params_catalog: tên -> Fixture
        settings: SuiteSettings (mặc định: không chạy các suite Monte Carlo lớn)
    """
    settings = settings or SuiteSettings()
    suites = SUITES + (MONTE_CARLO_SUITES if settings.include_monte_carlo else ())
    report = AggregateReport()
    for name, fixture in params_catalog.items():
        state: Dict[str, Any] = {'tau': settings.tau_mono if settings.tau_mono is not None else 0.0}
        gated = False
        for suite in suites:
            if gated:
                report.results.append(SuiteResult(name, suite, None, None, SKIPPED, "validate thất bại"))
                continue
            try:
                result = _SUITE_RUNNERS[suite](fixture, settings, state)
            except TargetZoneError as e:
                logger.warning(f"{name}/{suite}: {e}")
                result = SuiteResult(name, suite, None, None, FAIL, f"{type(e).__name__}: {e}")
            report.results.append(result)
            logger.info(f"{name}/{suite}: {result.verdict} (statistic={result.statistic}, tolerance={result.tolerance})")
            if suite == 'validate' and result.failed:
                gated = True
    return report
