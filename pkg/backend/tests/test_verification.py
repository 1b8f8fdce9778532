# -*- coding: utf-8 -*-
import pytest

from target_zone.fixtures import get_fixture
from target_zone.hjb_solver import EnvelopePair, ode_envelopes, solve_truncated
from target_zone.liquidation import Strategy
from target_zone.verification import (
    FAIL, PASS, SKIPPED, SUITES, AggregateReport, FkPointError, InsufficientPathsError, SuiteResult,
    SuiteSettings, run_property_suites, verify_dominance, verify_feynman_kac, verify_value,
    verify_value_horizons,
)


@pytest.fixture
def blind_surface(blind_oracle, oracle_grid):
    return solve_truncated(blind_oracle, oracle_grid, 10.0).with_metadata(error_estimate=1e-3)


@pytest.fixture
def oracle_surface(oracle, oracle_grid):
    return solve_truncated(oracle, oracle_grid, 10.0)


# =========================
# verify_value
# =========================

def test_verify_value_zero_inventory(oracle, oracle_surface):
    report = verify_value(oracle, oracle_surface, x0=0.0, y0=0.0, n_paths=10, t_cut=0.9, dt=0.01, seed=3)
    assert report.reference == 0.0
    assert report.total == 0.0
    assert report.passed


def test_verify_value_deterministic_inventory(blind_oracle, blind_surface):
    # gamma = +inf: không có lệnh khớp trong dark pool, tồn kho là hàm tất định của t
    report = verify_value(blind_oracle, blind_surface, x0=1.0, y0=0.0, n_paths=20, t_cut=0.9, dt=0.01, seed=5)
    assert report.passed
    assert report.total == pytest.approx(report.reference, rel=5e-2)
    assert set(report.decomposition) == {'impact', 'risk', 'slippage'}
    assert report.decomposition['slippage'] == 0.0


def test_verify_value_single_path_with_envelopes(blind_oracle, blind_surface):
    report = verify_value(blind_oracle, blind_surface, x0=1.0, y0=0.0, n_paths=1, t_cut=0.9, dt=0.01, seed=5,
                          envelopes=ode_envelopes(blind_oracle, 10.0))
    assert report.stderr == 0.0
    assert report.passed


def test_verify_value_outside_envelopes(oracle, oracle_surface):
    far_above = EnvelopePair(M=10.0, T=1.0, lower=lambda t: 10.0, upper=lambda t: 20.0,
                             tail=lambda t: 20.0, singular=lambda t: 20.0)
    report = verify_value(oracle, oracle_surface, x0=0.0, y0=0.0, n_paths=5, t_cut=0.9, dt=0.01, seed=5,
                          envelopes=far_above)
    assert not report.passed


def test_verify_value_needs_paths(oracle, oracle_surface):
    with pytest.raises(InsufficientPathsError):
        verify_value(oracle, oracle_surface, 1.0, 0.0, n_paths=0, t_cut=0.9, dt=0.01, seed=1)


def test_verify_value_resolution_too_fine(oracle, oracle_surface):
    with pytest.raises(InsufficientPathsError):
        verify_value(oracle, oracle_surface, 1.0, 0.0, n_paths=20, t_cut=0.9, dt=0.01, seed=1, resolution=1e-9)


def test_value_identity_at_two_horizons(blind_oracle, blind_surface):
    reports = verify_value_horizons(blind_oracle, blind_surface, 1.0, 0.0, n_paths=20,
                                    t_cuts=[0.45, 0.9], dt=0.01, seed=5)
    assert len(reports) == 2
    assert all(report.passed for report in reports)
    # cùng u_0 nên cùng tham chiếu; chi phí đến t_cut khác nhau
    assert reports[0].reference == reports[1].reference
    assert reports[0].mean_cost > reports[1].mean_cost


# =========================
# verify_dominance
# =========================

def test_dominance_against_itself(oracle, oracle_surface):
    reports = verify_dominance(oracle, oracle_surface, [Strategy.optimal(oracle_surface)],
                               1.0, 0.0, n_paths=30, t_cut=0.9, dt=0.01, seed=11)
    assert len(reports) == 1
    assert reports[0].z_score == 0.0
    assert reports[0].passed


def test_dominance_over_twap(blind_oracle, blind_surface):
    reports = verify_dominance(blind_oracle, blind_surface, [Strategy.twap(), Strategy.optimal(blind_surface)],
                               1.0, 0.0, n_paths=20, t_cut=0.9, dt=0.01, seed=11)
    assert [r.strategy for r in reports] == ['optimal-feedback', 'twap']
    twap = reports[1]
    assert twap.z_score < 0
    assert twap.passed
    assert twap.total > reports[0].total


def test_dominance_survives_time_step_bias(upper_oracle, oracle_grid):
    # chi phí tất định: hiệu ghép cặp chỉ còn sai số rời rạc hóa
    surface = solve_truncated(upper_oracle, oracle_grid, 1000.0)
    reports = verify_dominance(upper_oracle, surface, [Strategy.twap()], 1.0, 0.0,
                               n_paths=20, t_cut=0.9, dt=0.01, seed=11)
    assert len(reports) == 1
    twap = reports[0]
    assert twap.z_score < 0
    assert twap.passed
    assert twap.total > surface.values[0, 0]


@pytest.mark.slow
def test_dark_pool_beats_baselines_at_scale():
    fixture = get_fixture('dark_pool')
    params, grid = fixture.params, fixture.grid()
    surface = solve_truncated(params, grid, 1000.0)
    without = solve_truncated(params.without_dark_pool(), grid, 1000.0)
    reports = verify_dominance(params, surface, [Strategy.twap(), Strategy.no_dark_pool(without)],
                               fixture.x0, fixture.start, n_paths=100_000, t_cut=fixture.t_cut, dt=0.01,
                               seed=2024)
    assert len(reports) == 2
    for report in reports:
        assert report.z_score <= -3.0, report.strategy


# =========================
# verify_feynman_kac
# =========================

def test_feynman_kac_zero_horizon(oracle, oracle_surface):
    report = verify_feynman_kac(oracle, oracle_surface, [(0.5, 1.0)], n_paths=5, dt=0.01, seed=2, tau=0.5)
    assert report.passed
    assert report.right[0] == pytest.approx(report.left[0], rel=1e-12)


def test_feynman_kac_point_outside(oracle, oracle_surface):
    with pytest.raises(FkPointError):
        verify_feynman_kac(oracle, oracle_surface, [(0.0, 100.0)], n_paths=5, dt=0.01, seed=2, tau=0.5)
    with pytest.raises(FkPointError):
        verify_feynman_kac(oracle, oracle_surface, [(0.8, 0.0)], n_paths=5, dt=0.01, seed=2, tau=0.5)


@pytest.mark.slow
def test_feynman_kac_oracle(oracle, oracle_surface):
    surface = oracle_surface.with_metadata(error_estimate=1e-3)
    report = verify_feynman_kac(oracle, surface, [(0.0, 0.0), (0.0, 1.0)], n_paths=2000, dt=0.01,
                                seed=7, tau=0.5)
    assert report.passed


# =========================
# Reports and suites
# =========================

def test_aggregate_report_round_trip():
    report = AggregateReport(results=[
        SuiteResult('oracle', 'validate', 0.0, 0.0, PASS),
        SuiteResult('oracle', 'monotonicity', 0.2, 0.1, FAIL, "MonotonicityError"),
        SuiteResult('oracle', 'envelope', None, None, SKIPPED, "không có thang"),
    ])
    again = AggregateReport.from_json(report.to_json())
    assert again == report
    assert not again.passed
    assert again.first_failure().suite == 'monotonicity'
    assert again.exit_code == 3


def test_empty_catalog():
    report = run_property_suites({})
    assert report.results == []
    assert report.passed
    assert report.exit_code == 0


def test_broken_fixture_gates_remaining_suites():
    report = run_property_suites({'broken': get_fixture('broken')})
    verdicts = {r.suite: r.verdict for r in report.results}
    assert verdicts['validate'] == FAIL
    assert all(verdicts[suite] == SKIPPED for suite in SUITES[1:])
    assert report.exit_code == 2
    assert 'superparabolicity' in report.first_failure().detail


@pytest.mark.slow
def test_oracle_fixture_suites():
    fixture = get_fixture('oracle').replace(M_schedule=(1.0, 10.0, 100.0))
    report = run_property_suites({'oracle': fixture}, SuiteSettings(tau_mono=1e-2, n_paths_small=50))
    verdicts = {r.suite: r.verdict for r in report.results}
    assert list(verdicts) == list(SUITES)
    for suite in ('validate', 'monotonicity', 'envelope', 'comparison', 'domain', 'skorokhod', 'decay', 'holder'):
        assert verdicts[suite] == PASS, suite


def test_value_suite_checks_two_horizons(blind_oracle):
    fixture = get_fixture('oracle').replace(name='blind', params=blind_oracle, M_schedule=(10.0,))
    settings = SuiteSettings(tau_mono=1e-2, n_paths_small=5, n_paths=20, include_monte_carlo=True)
    report = run_property_suites({'blind': fixture}, settings)
    value = next(r for r in report.results if r.suite == 'value')
    assert value.verdict == PASS
    assert 't_cut=0.9' in value.detail and 't_cut=0.45' in value.detail


@pytest.mark.slow
@pytest.mark.parametrize('name', ['oracle', 'y_dependent_lambda', 'dark_pool'])
def test_fixture_suites_with_derived_tolerance(name):
    report = run_property_suites({name: get_fixture(name)}, SuiteSettings(n_paths_small=1000))
    verdicts = {r.suite: r.verdict for r in report.results}
    for suite in ('monotonicity', 'envelope', 'comparison', 'domain', 'decay'):
        assert verdicts[suite] == PASS, suite
    tau = next(r for r in report.results if r.suite == 'monotonicity').tolerance
    assert tau < 0.05


@pytest.mark.slow
@pytest.mark.parametrize('name', ['y_dependent_lambda', 'dark_pool'])
def test_fixture_monte_carlo_identities(name):
    settings = SuiteSettings(n_paths=100_000, n_paths_small=50, include_monte_carlo=True)
    report = run_property_suites({name: get_fixture(name)}, settings)
    verdicts = {r.suite: r.verdict for r in report.results}
    assert verdicts['value'] == PASS
    assert verdicts['feynman_kac'] == PASS
