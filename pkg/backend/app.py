#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
liqzone: giao diện dòng lệnh của bộ công cụ thanh lý target-zone.

Lệnh: solve, simulate, evaluate, verify (đăng ký trên app.cli).
Mã thoát: 0 thành công; 2 cấu hình/tham số không hợp lệ; 3 thang không hội tụ
hoặc không đơn điệu; 4 thiếu surface; verify trả mã của suite thất bại đầu tiên.
"""

import math
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import click
from flask import Flask, current_app
from flask.cli import FlaskGroup

from database import DB_FILENAME, get_surface, init_db, save_surface
from run_config import ConfigError, RunConfig, load_run_config
from target_zone import TargetZoneError, __version__
from target_zone.artifacts import (
    cost_summary_frame, envelope_frame, ladder_frame, path_frames, provenance, read_csv,
    read_provenance, report_summary_frame, run_frames, surface_frame, surface_from_frame,
    write_csv, write_json,
)
from target_zone.fixtures import get_fixture
from target_zone.hjb_solver import (
    LADDER_LIMIT, EnvelopeViolationError, LadderNotConvergedError, MonotonicityError,
    ValueSurface, ode_envelopes, singular_limit, solve_ladder, solve_truncated,
)
from target_zone.liquidation import NO_DARK_POOL, OPTIMAL, TWAP, Strategy, run_batch
from target_zone.model import validate
from target_zone.pathsim import simulate_batch
from target_zone.verification import run_property_suites, verify_dominance, verify_value

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_LADDER = 3
EXIT_SURFACE_MISSING = 4

SURFACE_FILE = 'surface.csv'
SURFACE_LIMIT_FILE = 'surface_limit.csv'
SURFACE_NO_DARK_POOL_FILE = 'surface_no_dark_pool.csv'
NO_DARK_POOL_SUFFIX = '-no-dark-pool'


class SurfaceMissingError(TargetZoneError):
    """Chưa có surface cho chiến lược feedback (cần chạy solve trước)"""


def exit_code_for(error: Exception) -> int:
    """Ánh xạ ngoại lệ sang mã thoát ổn định"""
    if isinstance(error, SurfaceMissingError):
        return EXIT_SURFACE_MISSING
    if isinstance(error, (LadderNotConvergedError, MonotonicityError, EnvelopeViolationError)):
        return EXIT_LADDER
    return EXIT_INVALID


# =========================
# Surface artifacts
# =========================

def _out_dir(run_config: RunConfig) -> Path:
    out = Path(run_config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _db_path(run_config: RunConfig) -> str:
    return str(_out_dir(run_config) / DB_FILENAME)


def _header(run_config: RunConfig, **extra) -> Dict[str, str]:
    header = provenance(run_config.config_hash(), run_config.mc.seed)
    header.update({key: str(value) for key, value in extra.items()})
    return header


def _write_surface(run_config: RunConfig, surface: ValueSurface, filename: str, cache_key: str) -> None:
    out = _out_dir(run_config)
    header = _header(run_config, surface_hash=run_config.surface_hash(),
                     truncation_level=surface.truncation_level)
    write_csv(out / filename, surface_frame(surface), header)
    if not save_surface(cache_key, surface, _db_path(run_config)):
        click.echo(f"⚠️ Không ghi được surface {filename} vào cache")


def _load_surface(run_config: RunConfig, filenames: List[str], cache_key: str,
                  levels: List) -> ValueSurface:
    """
    Tìm surface trong cache trước, sau đó trong các file CSV của thư mục output.

    Raises:
        SurfaceMissingError: không có surface nào khớp surface_hash hiện tại
    """
    db_path = _db_path(run_config)
    init_db(db_path)
    for level in levels:
        surface = get_surface(cache_key, level, db_path)
        if surface is not None:
            logger.info(f"Dùng surface từ cache: {cache_key[:12]}:{level}")
            return surface

    out = Path(run_config.output.directory)
    for filename in filenames:
        path = out / filename
        if not path.exists():
            continue
        header = read_provenance(path)
        if header.get('surface_hash') != run_config.surface_hash():
            click.echo(f"⚠️ Bỏ qua {path}: surface được giải với cấu hình khác")
            continue
        level = header.get('truncation_level', LADDER_LIMIT)
        try:
            level = float(level)
        except ValueError:
            pass
        logger.info(f"Dùng surface từ {path}")
        return surface_from_frame(read_csv(path), level)

    raise SurfaceMissingError(
        f"Không tìm thấy surface trong {out} (cần: {', '.join(filenames)}); chạy 'solve' trước")


def _optimal_surface(run_config: RunConfig) -> ValueSurface:
    M_max = float(run_config.ladder.M_schedule[-1])
    return _load_surface(run_config, [SURFACE_LIMIT_FILE, SURFACE_FILE], run_config.surface_hash(),
                         [LADDER_LIMIT, M_max])


def _no_dark_pool_surface(run_config: RunConfig) -> ValueSurface:
    if not run_config.model.marks:
        return _optimal_surface(run_config)
    M_max = float(run_config.ladder.M_schedule[-1])
    return _load_surface(run_config, [SURFACE_NO_DARK_POOL_FILE],
                         run_config.surface_hash() + NO_DARK_POOL_SUFFIX, [M_max])


def _strategies(run_config: RunConfig, tags: List[str]) -> List[Tuple[Strategy, float]]:
    """Chiến lược kèm t_cut: TWAP chạy tới T, feedback dừng tại t_cut của cấu hình"""
    strategies = []
    for tag in tags:
        if tag == TWAP:
            strategies.append((Strategy.twap(), run_config.model.T))
        elif tag == OPTIMAL:
            strategies.append((Strategy.optimal(_optimal_surface(run_config)), run_config.t_cut))
        elif tag == NO_DARK_POOL:
            strategies.append((Strategy.no_dark_pool(_no_dark_pool_surface(run_config)), run_config.t_cut))
    return strategies


# =========================
# Pipelines
# =========================

def cmd_solve(run_config: RunConfig) -> int:
    """Giải thang M, ghi surface, cặp bao và nhật ký hội tụ"""
    params = run_config.model
    violations = validate(params)
    if violations:
        for violation in violations:
            click.echo(f"❌ {violation}")
        return EXIT_INVALID

    out = _out_dir(run_config)
    init_db(_db_path(run_config))
    header = _header(run_config)
    grid = run_config.build_grid()
    settings = run_config.scheme_settings()
    schedule = run_config.ladder.M_schedule

    click.echo(f"🔄 Đang giải {len(schedule)} bậc M = {schedule} trên lưới {grid.n_space} x {grid.t_grid.size}")
    ladder = solve_ladder(params, grid, schedule, settings, tau_mono=run_config.ladder.tau_mono,
                          delta=run_config.ladder.delta, workers=run_config.ladder.workers)
    top = ladder[-1]
    _write_surface(run_config, top, SURFACE_FILE, run_config.surface_hash())
    write_csv(out / 'envelopes.csv', envelope_frame(ode_envelopes(params, float(top.truncation_level)), grid.t_grid),
              header)
    write_csv(out / 'ladder.csv', ladder_frame(ladder), header)
    click.echo(f"✅ Đã ghi {SURFACE_FILE}, envelopes.csv, ladder.csv vào {out}")

    if params.marks:
        baseline = solve_truncated(params.without_dark_pool(), grid, float(top.truncation_level), settings)
        _write_surface(run_config, baseline, SURFACE_NO_DARK_POOL_FILE,
                       run_config.surface_hash() + NO_DARK_POOL_SUFFIX)
        click.echo(f"✅ Đã ghi {SURFACE_NO_DARK_POOL_FILE}")

    if len(ladder) == 1:
        click.echo("⚠️ Thang chỉ có một bậc: bỏ qua kiểm tra hội tụ")
        return EXIT_OK

    limit = singular_limit(params, grid, schedule, run_config.t_cut, settings,
                           eps_ladder=run_config.ladder.eps_ladder, tau_env=run_config.ladder.tau_env,
                           ladder=ladder)
    _write_surface(run_config, limit, SURFACE_LIMIT_FILE, run_config.surface_hash())
    click.echo(f"✅ Thang hội tụ trên [0, {run_config.t_cut}] (gap {limit.ladder_gap:.3g}); "
               f"đã ghi {SURFACE_LIMIT_FILE}")
    return EXIT_OK


def cmd_simulate(run_config: RunConfig) -> int:
    """Mô phỏng path và chạy các chiến lược trong mc.strategies trên cùng một batch"""
    params = run_config.model
    mc = run_config.mc
    strategies = _strategies(run_config, mc.strategies)
    out = _out_dir(run_config)
    header = _header(run_config)

    click.echo(f"🔄 Mô phỏng {mc.n_paths} path (dt={mc.dt}, seed={mc.seed})")
    batch = simulate_batch(params, run_config.y0, mc.dt, mc.n_paths, mc.seed)
    frames = path_frames(batch)
    write_csv(out / 'paths.csv', frames['paths'], header)
    write_csv(out / 'path_events.csv', frames['events'], header)

    runs_by_strategy = {}
    for strategy, t_cut in strategies:
        runs = run_batch(params, strategy, batch, mc.x0, t_cut)
        frames = run_frames(runs)
        write_csv(out / f'runs_{strategy.name}.csv', frames['runs'], header)
        write_csv(out / f'run_events_{strategy.name}.csv', frames['events'], header)
        runs_by_strategy[strategy.name] = runs
    write_csv(out / 'cost_summary.csv', cost_summary_frame(runs_by_strategy), header)
    click.echo(f"✅ Đã ghi path và {len(runs_by_strategy)} chiến lược vào {out}")
    return EXIT_OK


def cmd_evaluate(run_config: RunConfig) -> int:
    """Ước lượng chi phí kỳ vọng: đồng nhất thức giá trị và so sánh với các chiến lược cơ sở"""
    params = run_config.model
    mc = run_config.mc
    surface = _optimal_surface(run_config)
    baselines = [strategy for strategy, _ in _strategies(run_config, [t for t in mc.strategies if t != OPTIMAL])]
    out = _out_dir(run_config)
    header = _header(run_config)

    level = surface.truncation_level
    envelopes = ode_envelopes(params, math.inf if isinstance(level, str) else float(level))

    click.echo(f"🔄 Đánh giá trên {mc.n_paths} path tại t_cut={run_config.t_cut}")
    value = verify_value(params, surface, mc.x0, run_config.y0, mc.n_paths, run_config.t_cut, mc.dt, mc.seed,
                         envelopes=envelopes)
    dominance = verify_dominance(params, surface, baselines, mc.x0, run_config.y0, mc.n_paths,
                                 run_config.t_cut, mc.dt, mc.seed) if baselines else []
    write_json(out / 'evaluation.json', {'value': value.to_dict(),
                                         'dominance': [r.to_dict() for r in dominance]}, header)

    status = "✅" if value.passed else "⚠️"
    click.echo(f"{status} Giá trị: MC={value.total:.6g} ± {value.stderr:.3g}, tham chiếu={value.reference:.6g}")
    for report in dominance:
        status = "✅" if report.passed else "⚠️"
        click.echo(f"{status} {report.strategy}: tổng={report.total:.6g}, z={report.z_score:.2f}")
    return EXIT_OK


def cmd_verify(run_config: RunConfig) -> int:
    """Chạy property suites trên catalog verify.catalog; mã thoát của suite thất bại đầu tiên"""
    catalog = {}
    for name in run_config.verify.catalog:
        catalog[name] = run_config.as_fixture(name) if name == 'config' else get_fixture(name)

    click.echo(f"🔄 Kiểm chứng {len(catalog)} fixture: {', '.join(catalog) or '(rỗng)'}")
    report = run_property_suites(catalog, run_config.suite_settings())
    out = _out_dir(run_config)
    header = _header(run_config)
    write_json(out / 'report.json', report.to_dict(), header)
    write_csv(out / 'report_summary.csv', report_summary_frame(report), header)

    for result in report.results:
        status = {'pass': "✅", 'fail': "❌"}.get(result.verdict, "⚠️")
        click.echo(f"{status} {result.fixture}/{result.suite}: {result.verdict}")
    failure = report.first_failure()
    if failure is not None:
        click.echo(f"❌ Suite thất bại đầu tiên: {failure.fixture}/{failure.suite} (exit {report.exit_code})")
    return report.exit_code


PIPELINES = {'solve': cmd_solve, 'simulate': cmd_simulate, 'evaluate': cmd_evaluate, 'verify': cmd_verify}


# =========================
# Flask app
# =========================

def _resolve_config(config_path: Optional[str], out: Optional[str], seed: Optional[int],
                    paths: Optional[int]) -> RunConfig:
    """--config thắng cấu hình gắn với app; --out/--seed/--paths thắng biến môi trường"""
    if config_path:
        run_config = load_run_config(config_path)
    else:
        run_config = current_app.config.get('RUN_CONFIG')
        if run_config is None:
            raise ConfigError("Cần --config <path> (không có cấu hình mặc định)")
    if out is not None:
        run_config.output.directory = out
    if seed is not None:
        run_config.mc.seed = seed
    if paths is not None:
        if paths < 0:
            raise ConfigError(f"--paths phải >= 0, nhận {paths}")
        run_config.mc.n_paths = paths
    logging.getLogger().setLevel(run_config.output.log_level.upper())
    return run_config


def _run_pipeline(name: str, config_path, out, seed, paths) -> None:
    try:
        run_config = _resolve_config(config_path, out, seed, paths)
        code = PIPELINES[name](run_config)
    except TargetZoneError as e:
        code = exit_code_for(e)
        logger.debug(f"{name} thất bại", exc_info=True)
        click.echo(f"❌ {type(e).__name__}: {e}", err=True)
    click.get_current_context().exit(code)


def _pipeline_options(fn):
    fn = click.option('--paths', type=int, default=None, help="Số path Monte Carlo (ghi đè mc.n_paths)")(fn)
    fn = click.option('--seed', type=click.IntRange(0, 2 ** 64 - 1), default=None,
                      help="Seed (ghi đè mc.seed và LIQZONE_SEED)")(fn)
    fn = click.option('--out', 'out', type=click.Path(file_okay=False), default=None,
                      help="Thư mục output (ghi đè output.directory và LIQZONE_OUT_DIR)")(fn)
    fn = click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
                      help="File cấu hình YAML")(fn)
    return fn


def create_app(run_config: Optional[RunConfig] = None) -> Flask:
    """
    Tạo app với các lệnh CLI. Không có route HTTP: app chỉ là vỏ cho app.cli.

    Args:
        run_config: cấu hình mặc định khi lệnh không truyền --config
    """
    level = run_config.output.log_level.upper() if run_config is not None else 'INFO'
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s')

    app = Flask(__name__)
    app.config['RUN_CONFIG'] = run_config
    app.config['TOOL_VERSION'] = __version__

    @app.cli.command('solve')
    @_pipeline_options
    def solve_command(config_path, out, seed, paths):
        """Giải thang M và ghi surface, cặp bao, nhật ký hội tụ."""
        _run_pipeline('solve', config_path, out, seed, paths)

    @app.cli.command('simulate')
    @_pipeline_options
    def simulate_command(config_path, out, seed, paths):
        """Mô phỏng path và chạy các chiến lược thanh lý."""
        _run_pipeline('simulate', config_path, out, seed, paths)

    @app.cli.command('evaluate')
    @_pipeline_options
    def evaluate_command(config_path, out, seed, paths):
        """Ước lượng chi phí kỳ vọng và so sánh chiến lược."""
        _run_pipeline('evaluate', config_path, out, seed, paths)

    @app.cli.command('verify')
    @_pipeline_options
    def verify_command(config_path, out, seed, paths):
        """Chạy property suites, ghi report.json."""
        _run_pipeline('verify', config_path, out, seed, paths)

    return app


cli = FlaskGroup(name='liqzone', create_app=create_app, add_default_commands=False,
                 help="Bộ công cụ thanh lý target-zone với dark pool.")


if __name__ == '__main__':
    cli()
