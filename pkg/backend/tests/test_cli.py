# -*- coding: utf-8 -*-
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from app import create_app
from target_zone.artifacts import read_csv, read_provenance

CONFIG_DIR = Path(__file__).resolve().parents[2] / 'configs'


def write_config(directory: Path, **changes) -> Path:
    """Bản sao configs/oracle.yaml với các section được thay thế (None = xóa section)"""
    data = yaml.safe_load((CONFIG_DIR / 'oracle.yaml').read_text(encoding='utf-8'))
    for section, value in changes.items():
        if value is None:
            data.pop(section, None)
        else:
            data[section] = value
    path = directory / 'run.yaml'
    path.write_text(yaml.safe_dump(data), encoding='utf-8')
    return path


def invoke(*args, env=None):
    runner = create_app().test_cli_runner()
    return runner.invoke(args=[str(a) for a in args], env=env)


@pytest.fixture(scope='module')
def solved(tmp_path_factory):
    """Thư mục output đã có surface của cấu hình oracle"""
    directory = tmp_path_factory.mktemp('solved')
    config = write_config(directory)
    out = directory / 'out'
    result = invoke('solve', '--config', config, '--out', out)
    assert result.exit_code == 0, result.output
    return config, out


# =========================
# solve
# =========================

def test_solve_oracle(solved):
    _, out = solved
    surface = read_csv(out / 'surface.csv')
    at_origin = surface[(surface['t'] == 0.0) & (surface['y'] == 0.0)]['u'].iloc[0]
    assert at_origin == pytest.approx(0.502485, rel=1e-4)
    assert float(read_provenance(out / 'surface.csv')['truncation_level']) == 10.0
    assert read_csv(out / 'ladder.csv')['note'].tolist() == ['single rung']
    assert (out / 'envelopes.csv').exists()
    assert (out / 'surface_no_dark_pool.csv').exists()
    assert not (out / 'surface_limit.csv').exists()


def test_solve_missing_grid_section(tmp_path):
    config = write_config(tmp_path, grid=None)
    result = invoke('solve', '--config', config, '--out', tmp_path / 'out')
    assert result.exit_code == 2
    assert "'grid'" in result.output


def test_solve_invalid_model(tmp_path):
    model = yaml.safe_load((CONFIG_DIR / 'oracle.yaml').read_text(encoding='utf-8'))['model']
    model['sigma_bar'] = 0.0
    config = write_config(tmp_path, model=model)
    result = invoke('solve', '--config', config, '--out', tmp_path / 'out')
    assert result.exit_code == 2
    assert 'superparabolicity' in result.output


def test_solve_requires_config(tmp_path):
    result = invoke('solve', '--out', tmp_path)
    assert result.exit_code == 2


def test_solve_out_dir_from_env(tmp_path):
    config = write_config(tmp_path, grid={'y_max': 4.0, 'n_space': 21, 'n_time': 40, 'refine_count': 4})
    result = invoke('solve', '--config', config, env={'LIQZONE_OUT_DIR': str(tmp_path / 'env_out')})
    assert result.exit_code == 0, result.output
    assert (tmp_path / 'env_out' / 'surface.csv').exists()


# =========================
# simulate
# =========================

def test_simulate_is_deterministic(solved):
    config, out = solved
    assert invoke('simulate', '--config', config, '--out', out, '--paths', 20).exit_code == 0
    first = {name: (out / name).read_bytes() for name in ('paths.csv', 'runs_optimal-feedback.csv', 'cost_summary.csv')}
    assert invoke('simulate', '--config', config, '--out', out, '--paths', 20).exit_code == 0
    for name, content in first.items():
        assert (out / name).read_bytes() == content, name


def test_simulate_seed_changes_paths(solved, tmp_path):
    config, out = solved
    invoke('simulate', '--config', config, '--out', out, '--paths', 5, '--seed', 1)
    first = (out / 'paths.csv').read_bytes()
    invoke('simulate', '--config', config, '--out', out, '--paths', 5, '--seed', 2)
    assert (out / 'paths.csv').read_bytes() != first
    assert read_provenance(out / 'paths.csv')['seed'] == '2'


def test_simulate_zero_paths(solved):
    config, out = solved
    result = invoke('simulate', '--config', config, '--out', out, '--paths', 0)
    assert result.exit_code == 0, result.output
    paths = read_csv(out / 'paths.csv')
    assert paths.empty
    assert list(paths.columns) == ['path', 't', 'y', 'dL']


def test_simulate_twap_inventory(solved):
    config, out = solved
    assert invoke('simulate', '--config', config, '--out', out, '--paths', 3).exit_code == 0
    runs = read_csv(out / 'runs_twap.csv')
    np.testing.assert_allclose(runs['x'], 1.0 - runs['t'], atol=1e-9)
    assert sorted(runs['path'].unique().tolist()) == [0, 1, 2]


def test_simulate_without_surface(tmp_path):
    config = write_config(tmp_path)
    result = invoke('simulate', '--config', config, '--out', tmp_path / 'empty', '--paths', 5)
    assert result.exit_code == 4
    assert 'SurfaceMissingError' in result.output


def test_simulate_ignores_stale_surface(solved, tmp_path):
    _, out = solved
    grid = {'y_max': 6.0, 'n_space': 31, 'n_time': 100, 'refine_count': 8}
    config = write_config(tmp_path, grid=grid)
    result = invoke('simulate', '--config', config, '--out', out, '--paths', 5)
    assert result.exit_code == 4


# =========================
# evaluate / verify
# =========================

def test_evaluate(solved):
    config, out = solved
    result = invoke('evaluate', '--config', config, '--out', out, '--paths', 200)
    assert result.exit_code == 0, result.output
    document = json.loads((out / 'evaluation.json').read_text(encoding='utf-8'))
    assert document['value']['reference'] == pytest.approx(0.502485, rel=1e-3)
    assert [r['strategy'] for r in document['dominance']] == ['twap']


def test_verify_empty_catalog(tmp_path):
    config = write_config(tmp_path, verify={'catalog': []})
    result = invoke('verify', '--config', config, '--out', tmp_path / 'out')
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / 'out' / 'report.json').read_text(encoding='utf-8'))
    assert report['results'] == []
    assert report['passed'] is True


def test_verify_broken_catalog(tmp_path):
    config = write_config(tmp_path, verify={'catalog': ['broken']})
    result = invoke('verify', '--config', config, '--out', tmp_path / 'out')
    assert result.exit_code == 2
    report = json.loads((tmp_path / 'out' / 'report.json').read_text(encoding='utf-8'))
    failed = [r for r in report['results'] if r['verdict'] == 'fail']
    assert failed[0]['suite'] == 'validate'
    assert 'config_hash' in report['provenance']


def test_verify_unknown_fixture(tmp_path):
    config = write_config(tmp_path, verify={'catalog': ['nope']})
    result = invoke('verify', '--config', config, '--out', tmp_path / 'out')
    assert result.exit_code == 2


@pytest.mark.slow
def test_verify_oracle_catalog_report(tmp_path):
    config = write_config(tmp_path, verify={'catalog': ['oracle']})
    result = invoke('verify', '--config', config, '--out', tmp_path / 'out')
    report = json.loads((tmp_path / 'out' / 'report.json').read_text(encoding='utf-8'))
    suites = [r['suite'] for r in report['results']]
    assert suites[:2] == ['validate', 'monotonicity']
    summary = read_csv(tmp_path / 'out' / 'report_summary.csv')
    assert len(summary) == len(report['results'])
    assert (result.exit_code == 0) == report['passed']
