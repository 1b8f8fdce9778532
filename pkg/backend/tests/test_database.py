# -*- coding: utf-8 -*-
import sqlite3

import numpy as np
import pytest

import database
from target_zone.hjb_solver import Grid, ValueSurface


@pytest.fixture
def db_path(tmp_path):
    path = str(tmp_path / database.DB_FILENAME)
    database.init_db(path)
    return path


def _row_count(db_path: str) -> int:
    conn = sqlite3.connect(db_path)
    count = conn.execute('SELECT COUNT(*) FROM surfaces').fetchone()[0]
    conn.close()
    return count


@pytest.fixture
def surface():
    grid = Grid(0.0, 2.0, 3, np.linspace(0.0, 0.9, 4))
    values = np.arange(12, dtype=float).reshape(4, 3)
    return ValueSurface(grid=grid, values=values, truncation_level=10.0, residual=1e-9, rung_level=10.0)


def test_save_and_get(db_path, surface):
    assert database.save_surface('abc', surface, db_path)
    loaded = database.get_surface('abc', 10.0, db_path)
    assert loaded is not None
    np.testing.assert_array_equal(loaded.values, surface.values)
    np.testing.assert_array_equal(loaded.grid.t_grid, surface.grid.t_grid)
    assert loaded.grid.n_space == 3
    assert loaded.truncation_level == 10.0
    assert loaded.residual == 1e-9


def test_limit_level_key(db_path, surface):
    limit = surface.with_metadata(truncation_level='ladder-limit')
    assert database.save_surface('abc', limit, db_path)
    assert database.get_surface('abc', 'ladder-limit', db_path).truncation_level == 'ladder-limit'
    assert database.get_surface('abc', 10.0, db_path) is None


def test_missing_surface(db_path):
    assert database.get_surface('nope', 1.0, db_path) is None


def test_overwrite_same_key(db_path, surface):
    database.save_surface('abc', surface, db_path)
    database.save_surface('abc', surface.with_metadata(values=surface.values * 2.0), db_path)
    assert _row_count(db_path) == 1
    np.testing.assert_array_equal(database.get_surface('abc', 10.0, db_path).values, surface.values * 2.0)


def test_format_version_mismatch(db_path, surface):
    database.save_surface('abc', surface, db_path)
    conn = sqlite3.connect(db_path)
    conn.execute('UPDATE surfaces SET format_version = ?', (database.CACHE_FORMAT_VERSION + 1,))
    conn.commit()
    conn.close()
    assert database.get_surface('abc', 10.0, db_path) is None


def test_init_is_idempotent(db_path, surface):
    database.save_surface('abc', surface, db_path)
    database.init_db(db_path)
    assert _row_count(db_path) == 1
    assert database.get_surface('abc', 10.0, db_path) is not None


def test_schema_has_single_metadata_column(db_path):
    conn = sqlite3.connect(db_path)
    columns = [row[1] for row in conn.execute('PRAGMA table_info(surfaces)')]
    conn.close()
    assert columns.count('metadata') == 1
