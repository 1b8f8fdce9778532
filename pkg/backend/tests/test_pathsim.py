# -*- coding: utf-8 -*-
import math
import time

import numpy as np
import pytest

from conftest import constant_params
from target_zone.coefficients import Constant
from target_zone.model import Mark
from target_zone.pathsim import (
    PathError, RngStream, coarsen_batch, event_count_summary, mark_chisquare, occupation_check,
    reflected_gaussian_ks, simulate_batch, simulate_path,
)


def test_frozen_factor_stays_at_barrier(frozen_params):
    batch = simulate_batch(frozen_params, 0.0, 0.1, 3, seed=1)
    assert np.all(batch.y == 0.0)
    assert np.all(batch.dL == 0.0)


def test_negative_drift_absorbed_by_reflection(frozen_params):
    params = frozen_params.replace(beta=Constant(-1.0))
    path = simulate_batch(params, 0.0, 0.1, 1, seed=1).path(0)
    assert path.n_steps == 10
    assert np.all(path.y == 0.0)
    np.testing.assert_allclose(path.dL[1:], 0.1)
    assert path.dL[0] == 0.0
    assert path.local_time[-1] == pytest.approx(1.0)


def test_same_stream_gives_identical_path(oracle):
    first = simulate_batch(oracle, 0.5, 0.01, 4, seed=42)
    second = simulate_batch(oracle, 0.5, 0.01, 4, seed=42)
    np.testing.assert_array_equal(first.y, second.y)
    np.testing.assert_array_equal(first.times, second.times)


def test_path_does_not_depend_on_batch_size(oracle):
    batch = simulate_batch(oracle, 0.5, 0.01, 5, seed=7)
    single = simulate_path(oracle, 0.5, 0.01, RngStream(7, 3))
    np.testing.assert_array_equal(single.y, batch.path(3).y)
    np.testing.assert_array_equal(single.times, batch.path(3).times)


def test_different_streams_differ(oracle):
    batch = simulate_batch(oracle, 0.5, 0.01, 2, seed=7)
    assert not np.array_equal(batch.path(0).y, batch.path(1).y)


def test_event_times_are_grid_nodes(oracle):
    batch = simulate_batch(oracle, 0.0, 0.05, 20, seed=3)
    for path in batch.paths():
        for t, mark in path.events:
            assert 0.0 < t < oracle.T
            assert mark == 0
            assert t in path.times
        assert np.all(np.diff(path.times) > 0)
        assert path.times[-1] == oracle.T


def test_skorokhod_identity_holds_exactly(oracle):
    batch = simulate_batch(oracle.replace(beta=Constant(-0.5)), 0.0, 0.01, 50, seed=11)
    stats = occupation_check(batch)
    assert stats.max_product == 0.0
    assert np.all(batch.y >= oracle.a)
    assert stats.n_paths == 50


def test_occupation_check_accepts_path_list(oracle):
    batch = simulate_batch(oracle, 0.0, 0.01, 10, seed=5)
    from_list = occupation_check(batch.paths(), t=0.5)
    from_batch = occupation_check(batch, t=0.5)
    assert from_list.mean == pytest.approx(from_batch.mean)
    assert from_list.max_product == 0.0


def test_occupation_check_rejects_empty(oracle):
    with pytest.raises(PathError):
        occupation_check(simulate_batch(oracle, 0.0, 0.01, 0, seed=5))


def test_empty_batch_has_zero_rows(oracle):
    batch = simulate_batch(oracle, 0.0, 0.01, 0, seed=5)
    assert batch.n_paths == 0
    assert batch.times.shape[0] == 0


@pytest.mark.parametrize('kwargs', [
    dict(y0=-0.1, dt=0.01, n_paths=1),
    dict(y0=0.0, dt=0.0, n_paths=1),
    dict(y0=0.0, dt=0.01, n_paths=-1),
])
def test_invalid_simulation_arguments(oracle, kwargs):
    with pytest.raises(PathError):
        simulate_batch(oracle, seed=1, **kwargs)


def test_coarsened_batch_keeps_events_and_end(oracle):
    batch = simulate_batch(oracle, 0.0, 0.01, 5, seed=9)
    coarse = coarsen_batch(batch)
    assert coarse.dt == pytest.approx(0.02)
    for i in range(batch.n_paths):
        fine, rough = batch.path(i), coarse.path(i)
        assert rough.times[-1] == fine.times[-1]
        assert [t for t, _ in rough.events] == [t for t, _ in fine.events]
        assert rough.dW.sum() == pytest.approx(fine.dW.sum())


@pytest.mark.slow
def test_event_count_matches_poisson_mean():
    params = constant_params(marks=(Mark(1.0, 1.5, Constant(1.0)), Mark(2.0, 0.5, Constant(1.0))))
    batch = simulate_batch(params, 0.0, 0.5, 100000, seed=2024)
    mean, _ = event_count_summary(batch)
    assert abs(mean - 2.0) <= 3.0 * math.sqrt(2.0 / 100000)
    assert mark_chisquare(batch).pvalue > 0.01


def _projected_walk_mean(dt: float, n_steps: int) -> float:
    """E y_n của y_{k+1} = max(0, y_k + N(0, dt)), y_0 = 0: sqrt(dt/(2 pi)) sum_{k<=n} k^{-1/2}"""
    return math.sqrt(dt / (2.0 * math.pi)) * float(np.sum(np.arange(1, n_steps + 1) ** -0.5))


def test_projected_walk_mean_tends_to_half_normal():
    fine = _projected_walk_mean(1e-6, 1_000_000)
    assert fine == pytest.approx(math.sqrt(2.0 / math.pi), rel=2e-3)
    assert _projected_walk_mean(0.02, 50) < fine


@pytest.mark.slow
def test_reflected_brownian_half_normal_mean():
    params = constant_params()
    dt, n_paths = 0.02, 100_000
    started = time.perf_counter()
    batch = simulate_batch(params, 0.0, dt, n_paths, seed=99)
    stats = occupation_check(batch)
    elapsed = time.perf_counter() - started

    assert stats.max_product == 0.0
    exact_discrete = _projected_walk_mean(dt, 50)
    assert abs(stats.mean - exact_discrete) <= 3.0 * stats.stderr
    # độ lệch của phép chiếu rời rạc so với sqrt(2T/pi) đã biết chính xác
    bias = math.sqrt(2.0 / math.pi) - exact_discrete
    assert abs(stats.mean - math.sqrt(2.0 / math.pi)) <= 3.0 * stats.stderr + bias
    assert elapsed < 30.0


@pytest.mark.slow
def test_terminal_law_far_from_barrier_is_gaussian():
    params = constant_params()
    batch = simulate_batch(params, 5.0, 0.05, 100_000, seed=123)
    assert reflected_gaussian_ks(batch).pvalue > 0.01


def test_terminal_law_small_batch_is_gaussian():
    params = constant_params()
    batch = simulate_batch(params, 5.0, 0.05, 2000, seed=123)
    assert reflected_gaussian_ks(batch).statistic < 0.05
