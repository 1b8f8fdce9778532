#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Artifacts: ghi/đọc các file kết quả (CSV qua pandas, JSON).

Mọi file đều bắt đầu bằng header provenance dạng comment (# key: value):
config_hash, seed, version. Không ghi timestamp để hai lần chạy cùng seed cho
ra file giống hệt nhau từng byte.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Union

import numpy as np
import pandas as pd

from . import __version__
from .hjb_solver import EnvelopePair, Grid, Ladder, ValueSurface
from .liquidation import RunBatch
from .pathsim import PathBatch
from .verification import AggregateReport

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'
SURFACE_COLUMNS = ['t', 'y', 'u']
PATH_COLUMNS = ['path', 't', 'y', 'dL']
PATH_EVENT_COLUMNS = ['path', 't', 'mark']
RUN_COLUMNS = ['path', 't', 'y', 'x', 'xi', 'cost_impact', 'cost_risk', 'cost_slippage']
RUN_EVENT_COLUMNS = ['path', 't', 'mark', 'rho']
SUMMARY_COLUMNS = ['fixture', 'suite', 'statistic', 'tolerance', 'verdict']

PathLike = Union[str, Path]


def provenance(config_hash: str, seed: Optional[int]) -> Dict[str, str]:
    return {'config_hash': config_hash, 'seed': '' if seed is None else str(seed), 'version': __version__}


def write_csv(path: PathLike, frame: pd.DataFrame, header: Mapping[str, str]) -> Path:
    """Ghi CSV với header provenance; số thực ở độ chính xác đầy đủ (%.17g)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        for key, value in header.items():
            f.write(f"# {key}: {value}\n")
        frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    logger.debug(f"Đã ghi {path} ({len(frame)} dòng)")
    return path


def read_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, comment='#')


def read_provenance(path: PathLike) -> Dict[str, str]:
    """Đọc lại header provenance của một file CSV"""
    header = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            if not line.startswith('#'):
                break
            key, _, value = line[1:].strip().partition(':')
            header[key.strip()] = value.strip()
    return header


def write_json(path: PathLike, payload: Mapping[str, Any], header: Mapping[str, str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {'provenance': dict(header), **payload}
    path.write_text(json.dumps(document, indent=2, ensure_ascii=False, allow_nan=True) + "\n", encoding='utf-8')
    return path


# =========================
# Surfaces
# =========================

def surface_frame(surface: ValueSurface) -> pd.DataFrame:
    """Cột t,y,u theo thứ tự hàng: thời gian trước, không gian sau"""
    tt, yy = np.meshgrid(surface.times, surface.ys, indexing='ij')
    return pd.DataFrame({'t': tt.ravel(), 'y': yy.ravel(), 'u': surface.values.ravel()}, columns=SURFACE_COLUMNS)


def surface_from_frame(frame: pd.DataFrame, truncation_level: Union[float, str], **metadata) -> ValueSurface:
    """Dựng lại ValueSurface từ bảng t,y,u (lưới suy từ các giá trị duy nhất)"""
    times = np.unique(frame['t'].to_numpy())
    ys = np.unique(frame['y'].to_numpy())
    grid = Grid(a=float(ys[0]), y_max=float(ys[-1]), n_space=int(ys.size), t_grid=times)
    values = frame['u'].to_numpy().reshape(times.size, ys.size)
    return ValueSurface(grid=grid, values=values, truncation_level=truncation_level, **metadata)


def envelope_frame(envelopes: EnvelopePair, times: Iterable[float]) -> pd.DataFrame:
    t = np.asarray([s for s in times if s < envelopes.T], dtype=float)
    return pd.DataFrame({
        't': t,
        'lower': np.asarray(envelopes.lower(t), dtype=float) * np.ones_like(t),
        'upper': np.asarray(envelopes.upper(t), dtype=float) * np.ones_like(t),
        'tail': np.asarray(envelopes.tail(t), dtype=float) * np.ones_like(t),
        'singular': np.asarray(envelopes.singular(t), dtype=float) * np.ones_like(t),
    })


def ladder_frame(ladder: Ladder) -> pd.DataFrame:
    """Nhật ký hội tụ của thang: mỗi bậc một dòng; bậc đơn được đánh dấu 'single rung'"""
    rows = []
    for i, rung in enumerate(ladder):
        note = "single rung" if len(ladder) == 1 else ("final" if i == len(ladder) - 1 else "")
        rows.append({
            'rung': i, 'M': float(rung.truncation_level), 'u0_min': float(rung.values[0].min()),
            'u0_max': float(rung.values[0].max()), 'residual': rung.residual,
            'gap': ladder.gap if i == len(ladder) - 1 and ladder.gap is not None else np.nan,
            'note': note,
        })
    return pd.DataFrame(rows, columns=['rung', 'M', 'u0_min', 'u0_max', 'residual', 'gap', 'note'])


# =========================
# Paths and runs
# =========================

def _rows(batch_times: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    width = batch_times.shape[1] if batch_times.ndim == 2 else 0
    return np.arange(width)[None, :] < lengths[:, None]


def path_frames(batch: PathBatch) -> Dict[str, pd.DataFrame]:
    """{'paths': path,t,y,dL ; 'events': path,t,mark}"""
    if batch.n_paths == 0:
        return {'paths': pd.DataFrame(columns=PATH_COLUMNS), 'events': pd.DataFrame(columns=PATH_EVENT_COLUMNS)}
    mask = _rows(batch.times, batch.lengths)
    index = np.broadcast_to(np.arange(batch.n_paths)[:, None], batch.times.shape)
    paths = pd.DataFrame({'path': index[mask], 't': batch.times[mask], 'y': batch.y[mask], 'dL': batch.dL[mask]},
                         columns=PATH_COLUMNS)
    events_mask = mask & batch.is_event
    events = pd.DataFrame({'path': index[events_mask], 't': batch.times[events_mask],
                           'mark': batch.mark[events_mask]}, columns=PATH_EVENT_COLUMNS)
    return {'paths': paths, 'events': events}


def run_frames(runs: RunBatch) -> Dict[str, pd.DataFrame]:
    """{'runs': path,t,y,x,xi,cost_*  ; 'events': path,t,mark,rho}"""
    if runs.n_paths == 0:
        return {'runs': pd.DataFrame(columns=RUN_COLUMNS), 'events': pd.DataFrame(columns=RUN_EVENT_COLUMNS)}
    mask = _rows(runs.times, runs.lengths)
    index = np.broadcast_to(np.arange(runs.n_paths)[:, None], runs.times.shape)
    frame = pd.DataFrame({
        'path': index[mask], 't': runs.times[mask], 'y': runs.y[mask], 'x': runs.x[mask], 'xi': runs.xi[mask],
        'cost_impact': runs.impact[mask], 'cost_risk': runs.risk[mask], 'cost_slippage': runs.slippage[mask],
    }, columns=RUN_COLUMNS)
    events_mask = mask & runs.batch.is_event
    events = pd.DataFrame({'path': index[events_mask], 't': runs.times[events_mask],
                           'mark': runs.batch.mark[events_mask], 'rho': runs.rho_exec[events_mask]},
                          columns=RUN_EVENT_COLUMNS)
    return {'runs': frame, 'events': events}


def cost_summary_frame(runs_by_strategy: Mapping[str, RunBatch]) -> pd.DataFrame:
    """Tổng hợp trung bình chi phí theo chiến lược"""
    rows: List[Dict[str, Any]] = []
    for name, runs in runs_by_strategy.items():
        costs = runs.costs()
        total = runs.total_cost()
        n = runs.n_paths
        rows.append({
            'strategy': name, 'n_paths': n,
            'mean_impact': float(np.mean(costs['impact'])) if n else np.nan,
            'mean_risk': float(np.mean(costs['risk'])) if n else np.nan,
            'mean_slippage': float(np.mean(costs['slippage'])) if n else np.nan,
            'mean_total': float(np.mean(total)) if n else np.nan,
            'stderr_total': float(np.std(total, ddof=1) / np.sqrt(n)) if n > 1 else np.nan,
            'mean_residual': float(np.mean(np.abs(runs.terminal_inventory()))) if n else np.nan,
        })
    return pd.DataFrame(rows, columns=['strategy', 'n_paths', 'mean_impact', 'mean_risk', 'mean_slippage',
                                       'mean_total', 'stderr_total', 'mean_residual'])


def report_summary_frame(report: AggregateReport) -> pd.DataFrame:
    return pd.DataFrame([{key: r.to_dict()[key] for key in SUMMARY_COLUMNS} for r in report.results],
                        columns=SUMMARY_COLUMNS)
