#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
RunConfig: đọc file cấu hình YAML của một lần chạy.

Các section: model, grid (bắt buộc); ladder, mc, output, verify (tùy chọn, có mặc định).
Biến môi trường chỉ ghi đè LIQZONE_OUT_DIR và LIQZONE_SEED; cờ CLI ưu tiên hơn môi trường.
"""

import os
import json
import hashlib
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import yaml

from target_zone import TargetZoneError
from target_zone.coefficients import CoefficientError, coefficient_to_spec, parse_coefficient
from target_zone.fixtures import Fixture
from target_zone.hjb_solver import NONLINEAR_METHODS, Grid, SchemeSettings
from target_zone.liquidation import STRATEGY_TAGS
from target_zone.model import Mark, ModelParams
from target_zone.verification import SuiteSettings

logger = logging.getLogger(__name__)

ENV_OUT_DIR = 'LIQZONE_OUT_DIR'
ENV_SEED = 'LIQZONE_SEED'
REQUIRED_SECTIONS = ('model', 'grid')
OPTIONAL_SECTIONS = ('ladder', 'mc', 'output', 'verify')
COEFFICIENT_KEYS = ('beta', 'sigma', 'sigma_bar', 'eta', 'lam')
MODEL_SCALARS = ('q', 'T', 'a', 'Lambda', 'kappa', 'kappa0')


class ConfigError(TargetZoneError):
    """File cấu hình thiếu section, sai khóa hoặc sai kiểu"""


@dataclass
class GridConfig:
    y_max: Optional[float] = None
    n_space: int = 201
    n_time: int = 400
    refine_count: int = 160
    refine_ratio: float = 0.95


@dataclass
class LadderConfig:
    M_schedule: List[float] = field(default_factory=lambda: [1.0, 10.0, 100.0, 1000.0])
    t_cut: Optional[float] = None
    eps_ladder: float = 1e-3
    tau_mono: Optional[float] = None
    tau_env: Optional[float] = None
    delta: Optional[float] = None
    theta_time: float = 0.5
    startup_steps: int = 2
    neumann_order: int = 2
    nonlinear: str = "newton"
    workers: int = 1


@dataclass
class McConfig:
    n_paths: int = 1000
    dt: float = 0.01
    seed: int = 20240601
    x0: float = 1.0
    y0: Optional[float] = None
    strategies: List[str] = field(default_factory=lambda: ['optimal-feedback', 'twap', 'no-dark-pool-feedback'])


@dataclass
class OutputConfig:
    directory: str = 'out'
    formats: List[str] = field(default_factory=lambda: ['csv'])
    log_level: str = 'INFO'


@dataclass
class VerifyConfig:
    catalog: List[str] = field(default_factory=lambda: ['config'])
    include_monte_carlo: bool = False
    n_paths_small: int = 200


SECTION_TYPES = {'grid': GridConfig, 'ladder': LadderConfig, 'mc': McConfig,
                 'output': OutputConfig, 'verify': VerifyConfig}


@dataclass
class RunConfig:
    """Cấu hình đầy đủ của một lần chạy (đã parse và áp mặc định)"""
    model: ModelParams
    grid: GridConfig
    ladder: LadderConfig = field(default_factory=LadderConfig)
    mc: McConfig = field(default_factory=McConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)

    @property
    def t_cut(self) -> float:
        return self.ladder.t_cut if self.ladder.t_cut is not None else 0.9 * self.model.T

    @property
    def y0(self) -> float:
        return self.mc.y0 if self.mc.y0 is not None else self.model.a

    @property
    def y_max(self) -> float:
        return self.grid.y_max if self.grid.y_max is not None else self.model.a + 6.0

    def build_grid(self) -> Grid:
        return Grid.build(self.model, self.y_max, self.grid.n_space, self.grid.n_time,
                          self.grid.refine_count, self.grid.refine_ratio)

    def scheme_settings(self) -> SchemeSettings:
        return SchemeSettings(theta_time=self.ladder.theta_time, startup_steps=self.ladder.startup_steps,
                              neumann_order=self.ladder.neumann_order, nonlinear=self.ladder.nonlinear)

    def suite_settings(self) -> SuiteSettings:
        return SuiteSettings(seed=self.mc.seed, dt=self.mc.dt, n_paths_small=self.verify.n_paths_small,
                             n_paths=self.mc.n_paths, tau_mono=self.ladder.tau_mono,
                             eps_ladder=self.ladder.eps_ladder,
                             include_monte_carlo=self.verify.include_monte_carlo,
                             scheme=self.scheme_settings())

    def as_fixture(self, name: str = 'config') -> Fixture:
        """Fixture tương ứng với chính cấu hình này (mục 'config' của catalog verify)"""
        return Fixture(name=name, params=self.model, description="cấu hình người dùng",
                       y_span=self.y_max - self.model.a, n_space=self.grid.n_space, n_time=self.grid.n_time,
                       refine_count=self.grid.refine_count, refine_ratio=self.grid.refine_ratio,
                       M_schedule=tuple(self.ladder.M_schedule), t_cut=self.t_cut, x0=self.mc.x0, y0=self.mc.y0)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'model': model_to_dict(self.model),
            **{name: asdict(getattr(self, name)) for name in SECTION_TYPES},
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, allow_unicode=True)

    def config_hash(self) -> str:
        """SHA-256 của JSON chuẩn hóa các section không phải output"""
        data = self.to_dict()
        data.pop('output')
        return _sha256(data)

    def surface_hash(self) -> str:
        # chỉ các section quyết định surface; đổi seed hay n_paths không làm cũ surface
        data = self.to_dict()
        return _sha256({name: data[name] for name in ('model', 'grid', 'ladder')})


def _sha256(data: Mapping[str, Any]) -> str:
    canonical = json.dumps(data, sort_keys=True, separators=(',', ':'), allow_nan=True)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def model_to_dict(params: ModelParams) -> Dict[str, Any]:
    data: Dict[str, Any] = {name: float(getattr(params, name)) for name in MODEL_SCALARS}
    for name in COEFFICIENT_KEYS:
        data[name] = coefficient_to_spec(getattr(params, name))
    data['marks'] = [{'z': float(m.z), 'w': float(m.w), 'gamma': coefficient_to_spec(m.gamma)}
                     for m in params.marks]
    return data


def _number(section: str, key: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key} phải là số, nhận {value!r}")
    return float(value)


def parse_model(data: Any) -> ModelParams:
    if not isinstance(data, dict):
        raise ConfigError("Section 'model' phải là một mapping")
    unknown = set(data) - set(MODEL_SCALARS) - set(COEFFICIENT_KEYS) - {'marks'}
    if unknown:
        raise ConfigError(f"model: khóa không hỗ trợ {sorted(unknown)}")
    for key in ('q', 'T'):
        if key not in data:
            raise ConfigError(f"model: thiếu khóa bắt buộc '{key}'")

    scalars = {'a': 0.0, 'Lambda': 1.0, 'kappa': 1.0, 'kappa0': 1.0}
    scalars.update({key: _number('model', key, data[key]) for key in MODEL_SCALARS if key in data})
    Lambda = scalars['Lambda']
    defaults = {'beta': 0.0, 'sigma': 0.0, 'sigma_bar': 1.0, 'eta': 1.0, 'lam': 0.0}
    try:
        coefficients = {key: parse_coefficient(data.get(key, defaults[key]), Lambda) for key in COEFFICIENT_KEYS}
        marks = []
        for i, mark in enumerate(data.get('marks') or []):
            if not isinstance(mark, dict) or 'w' not in mark:
                raise ConfigError(f"model.marks[{i}] phải là mapping có khóa 'w'")
            marks.append(Mark(z=_number('model.marks', 'z', mark.get('z', float(i))),
                              w=_number('model.marks', 'w', mark['w']),
                              gamma=parse_coefficient(mark.get('gamma', float('inf')), Lambda)))
    except CoefficientError as e:
        raise ConfigError(f"model: {e}") from e
    return ModelParams(q=scalars['q'], T=scalars['T'], a=scalars['a'], marks=tuple(marks),
                       Lambda=Lambda, kappa=scalars['kappa'], kappa0=scalars['kappa0'], **coefficients)


def _parse_section(name: str, data: Any):
    cls = SECTION_TYPES[name]
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"Section '{name}' phải là một mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{name}: khóa không hỗ trợ {sorted(unknown)}")
    try:
        section = cls(**data)
    except TypeError as e:
        raise ConfigError(f"{name}: {e}") from e
    return section


def _check(config: RunConfig) -> None:
    grid, ladder, mc = config.grid, config.ladder, config.mc
    if grid.n_space < 3 or grid.n_time < 1:
        raise ConfigError("grid: n_space phải >= 3 và n_time >= 1")
    if grid.refine_count < 0 or not 0.0 < grid.refine_ratio < 1.0:
        raise ConfigError(f"grid: refine_count phải >= 0 và refine_ratio thuộc (0, 1), nhận {grid.refine_count}, {grid.refine_ratio}")
    if not config.y_max > config.model.a:
        raise ConfigError(f"grid.y_max ({config.y_max}) phải lớn hơn a ({config.model.a})")
    if not ladder.M_schedule:
        raise ConfigError("ladder.M_schedule không được rỗng")
    schedule = [float(M) for M in ladder.M_schedule]
    if any(M < 0 for M in schedule) or any(b < a for a, b in zip(schedule, schedule[1:])):
        raise ConfigError(f"ladder.M_schedule phải không âm và tăng dần, nhận {schedule}")
    ladder.M_schedule = schedule
    if ladder.nonlinear not in NONLINEAR_METHODS:
        raise ConfigError(f"ladder.nonlinear phải thuộc {NONLINEAR_METHODS}, nhận '{ladder.nonlinear}'")
    if not 0.0 <= config.t_cut < config.model.T:
        raise ConfigError(f"ladder.t_cut phải thuộc [0, T), nhận {config.t_cut}")
    if mc.n_paths < 0 or not mc.dt > 0:
        raise ConfigError("mc: n_paths phải >= 0 và dt > 0")
    unknown = [s for s in mc.strategies if s not in STRATEGY_TAGS or s == 'custom']
    if unknown:
        raise ConfigError(f"mc.strategies không hỗ trợ: {unknown}")
    if config.output.log_level.upper() not in ('DEBUG', 'INFO', 'WARNING', 'ERROR'):
        raise ConfigError(f"output.log_level không hợp lệ: {config.output.log_level}")


def parse_run_config(data: Any) -> RunConfig:
    """
    Parse dict (đã đọc từ YAML) thành RunConfig.

    Raises:
        ConfigError: thiếu section bắt buộc, khóa lạ hoặc giá trị không hợp lệ
    """
    if not isinstance(data, dict):
        raise ConfigError("File cấu hình phải là một mapping YAML")
    for name in REQUIRED_SECTIONS:
        if name not in data:
            raise ConfigError(f"Thiếu section bắt buộc '{name}'")
    unknown = set(data) - set(REQUIRED_SECTIONS) - set(OPTIONAL_SECTIONS)
    if unknown:
        raise ConfigError(f"Section không hỗ trợ: {sorted(unknown)}")
    config = RunConfig(
        model=parse_model(data['model']),
        **{name: _parse_section(name, data.get(name)) for name in SECTION_TYPES},
    )
    _check(config)
    return config


def apply_env_overrides(config: RunConfig, env: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Ghi đè output.directory và mc.seed từ môi trường"""
    env = os.environ if env is None else env
    if env.get(ENV_OUT_DIR):
        config.output.directory = env[ENV_OUT_DIR]
    if env.get(ENV_SEED):
        try:
            config.mc.seed = int(env[ENV_SEED])
        except ValueError as e:
            raise ConfigError(f"{ENV_SEED} phải là số nguyên, nhận {env[ENV_SEED]!r}") from e
    return config


def load_run_config(path, env: Optional[Mapping[str, str]] = None) -> RunConfig:
    """
    Đọc file YAML, parse và áp biến môi trường.

    Raises:
        ConfigError: file không tồn tại, YAML lỗi hoặc nội dung không hợp lệ
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Không tìm thấy file cấu hình: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding='utf-8'))
    except yaml.YAMLError as e:
        raise ConfigError(f"YAML không hợp lệ trong {path}: {e}") from e
    config = apply_env_overrides(parse_run_config(data), env)
    logger.info(f"Đã đọc cấu hình {path} (hash {config.config_hash()[:12]})")
    return config
