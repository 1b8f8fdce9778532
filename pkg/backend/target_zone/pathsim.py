#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Pathsim: mô phỏng quá trình nhân tố y phản xạ tại a (Euler–Maruyama chiếu,
local time Skorokhod) cùng dòng sự kiện Poisson của dark pool.

Mỗi path có một luồng ngẫu nhiên riêng (seed, stream_id); thứ tự rút số cố định:
thời điểm sự kiện (mũ) -> mark -> gia số W, B. Một batch được đệm thành mảng
2 chiều bằng các bước độ dài 0 để bước phản xạ chạy vector hóa trên mọi path.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from . import TargetZoneError
from .model import ModelParams

logger = logging.getLogger(__name__)

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


class PathError(TargetZoneError):
    """Tham số mô phỏng không hợp lệ"""


@dataclass(frozen=True)
class RngStream:
    """(seed, stream_id) giống nhau => path giống hệt nhau từng bit"""
    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,)))


@dataclass(frozen=True, eq=False)
class ReflectedPath:
    """
    Một path: times[0..n], y[k] >= a, dL[k] là gia số local time trên bước (t_{k-1}, t_k]
    (dL[0] = 0); is_event[k] đánh dấu nút là thời điểm sự kiện, mark[k] là chỉ số mark (-1 nếu không).
    """
    times: np.ndarray
    y: np.ndarray
    dL: np.ndarray
    dW: np.ndarray
    dB: np.ndarray
    is_event: np.ndarray
    mark: np.ndarray
    a: float = 0.0

    @property
    def events(self) -> List[Tuple[float, int]]:
        idx = np.nonzero(self.is_event)[0]
        return [(float(self.times[k]), int(self.mark[k])) for k in idx]

    @property
    def local_time(self) -> np.ndarray:
        return np.cumsum(self.dL)

    @property
    def n_steps(self) -> int:
        return self.times.size - 1


@dataclass(frozen=True, eq=False)
class PathBatch:
    """
    Batch đệm: mọi mảng shape (n_paths, n_points); lengths[i] là số nút thật của path i,
    phần đệm lặp lại nút cuối với bước độ dài 0.
    """
    params: ModelParams
    y0: float
    dt: float
    seed: int
    first_stream: int
    times: np.ndarray
    y: np.ndarray
    dL: np.ndarray
    dW: np.ndarray
    dB: np.ndarray
    is_event: np.ndarray
    mark: np.ndarray
    lengths: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.times.shape[0]

    @property
    def horizon(self) -> float:
        return float(self.times[0, -1]) if self.n_paths else float('nan')

    @property
    def valid(self) -> np.ndarray:
        """Mặt nạ các nút thật (không phải phần đệm)"""
        return np.arange(self.times.shape[1])[None, :] < self.lengths[:, None]

    def path(self, i: int) -> ReflectedPath:
        n = int(self.lengths[i])
        return ReflectedPath(
            times=self.times[i, :n], y=self.y[i, :n], dL=self.dL[i, :n],
            dW=self.dW[i, :n - 1], dB=self.dB[i, :n - 1],
            is_event=self.is_event[i, :n], mark=self.mark[i, :n], a=self.params.a,
        )

    def paths(self) -> List[ReflectedPath]:
        return [self.path(i) for i in range(self.n_paths)]

    def terminal(self) -> np.ndarray:
        return self.y[:, -1]

    def event_counts(self) -> np.ndarray:
        return self.is_event.sum(axis=1)


def _regular_grid(t0: float, horizon: float, dt: float) -> np.ndarray:
    n_full = int(np.floor((horizon - t0) / dt + 1e-9))
    grid = t0 + dt * np.arange(n_full + 1)
    if horizon - grid[-1] > 1e-12 * max(1.0, horizon):
        grid = np.append(grid, horizon)
    else:
        grid[-1] = horizon
    return grid


def _draw_path(params: ModelParams, regular: np.ndarray, stream: RngStream):
    rng = stream.generator()
    t0, horizon = regular[0], regular[-1]
    event_times: List[float] = []
    mu = params.mu_total
    if mu > 0:
        s = t0
        while True:
            s += rng.exponential(1.0 / mu)
            if s >= horizon:
                break
            event_times.append(s)
    marks = (rng.choice(len(params.marks), size=len(event_times), p=params.mark_probabilities)
             if event_times else np.zeros(0, dtype=int))

    events = np.asarray(event_times, dtype=float)
    times = np.union1d(regular, events)
    is_event = np.isin(times, events)
    mark = np.full(times.size, -1, dtype=int)
    mark[is_event] = marks
    steps = np.diff(times)
    normals = rng.standard_normal((2, steps.size))
    root = np.sqrt(steps)
    return times, root * normals[0], root * normals[1], is_event, mark


def _pad(rows: Sequence[np.ndarray], width: int, fill_last: bool, fill_value=0.0) -> np.ndarray:
    dtype = rows[0].dtype if rows else float
    out = np.full((len(rows), width), fill_value, dtype=dtype)
    for i, row in enumerate(rows):
        out[i, :row.size] = row
        if fill_last and row.size:
            out[i, row.size:] = row[-1]
    return out


def _reflect(params: ModelParams, y0: float, times: np.ndarray,
             dW: np.ndarray, dB: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Bước chiếu vector hóa: y_{k+1} = max(a, y_hat), dL_{k+1} = max(0, a - y_hat)"""
    a = params.a
    n_paths, n_points = times.shape
    y = np.empty((n_paths, n_points))
    dL = np.zeros((n_paths, n_points))
    y[:, 0] = y0
    for k in range(n_points - 1):
        t = times[:, k]
        yk = y[:, k]
        step = times[:, k + 1] - t
        y_hat = (yk + params.beta(t, yk) * step + params.sigma(t, yk) * dW[:, k]
                 + params.sigma_bar(t, yk) * dB[:, k])
        y[:, k + 1] = np.maximum(a, y_hat)
        dL[:, k + 1] = np.maximum(0.0, a - y_hat)
    return y, dL


def simulate_batch(params: ModelParams, y0: float, dt: float, n_paths: int, seed: int,
                   first_stream: int = 0, t0: float = 0.0,
                   horizon: Optional[float] = None) -> PathBatch:
    """
    Mô phỏng n_paths path độc lập trên [t0, horizon], path i dùng RngStream(seed, first_stream + i).

    Args:
        y0: điểm xuất phát (>= a)
        dt: bước lưới đều (bước cuối có thể ngắn hơn)
        horizon: mặc định T

    Raises:
        PathError: y0 < a, dt <= 0, n_paths < 0 hoặc t0 nằm ngoài [0, horizon]
    """
    horizon = params.T if horizon is None else float(horizon)
    if not y0 >= params.a:
        raise PathError(f"y0 ({y0}) phải >= a ({params.a})")
    if not dt > 0:
        raise PathError(f"dt phải > 0, nhận {dt}")
    if n_paths < 0:
        raise PathError(f"n_paths phải >= 0, nhận {n_paths}")
    if not 0.0 <= t0 <= horizon:
        raise PathError(f"t0 ({t0}) phải thuộc [0, {horizon}]")

    regular = _regular_grid(t0, horizon, dt) if t0 < horizon else np.array([t0])
    drawn = [_draw_path(params, regular, RngStream(seed, first_stream + i)) for i in range(n_paths)]
    lengths = np.array([d[0].size for d in drawn], dtype=int)
    width = int(lengths.max()) if n_paths else regular.size

    times = _pad([d[0] for d in drawn], width, fill_last=True)
    dW = _pad([d[1] for d in drawn], width - 1, fill_last=False)
    dB = _pad([d[2] for d in drawn], width - 1, fill_last=False)
    is_event = _pad([d[3] for d in drawn], width, fill_last=False, fill_value=False)
    mark = _pad([d[4] for d in drawn], width, fill_last=False, fill_value=-1)
    if n_paths == 0:
        times = np.zeros((0, width))
        dW = dB = np.zeros((0, width - 1))
        is_event = np.zeros((0, width), dtype=bool)
        mark = np.zeros((0, width), dtype=int)
    y, dL = _reflect(params, y0, times, dW, dB)

    logger.debug(f"simulate_batch: {n_paths} path, seed={seed}, streams {first_stream}..{first_stream + n_paths - 1}, "
                 f"{int(is_event.sum())} sự kiện")
    return PathBatch(params=params, y0=float(y0), dt=float(dt), seed=int(seed), first_stream=int(first_stream),
                     times=times, y=y, dL=dL, dW=dW, dB=dB, is_event=is_event.astype(bool),
                     mark=mark.astype(int), lengths=lengths)


def simulate_path(params: ModelParams, y0: float, dt: float, rng: RngStream,
                  t0: float = 0.0, horizon: Optional[float] = None) -> ReflectedPath:
    """Một path đơn: đúng bằng path 0 của batch kích thước 1 cùng luồng"""
    return simulate_batch(params, y0, dt, 1, rng.seed, rng.stream_id, t0, horizon).path(0)


def coarsen_batch(batch: PathBatch) -> PathBatch:
    """
    Batch thô cùng nhiễu: giữ các nút đều có chỉ số chẵn, mọi nút sự kiện và nút cuối;
    gia số W, B được cộng dồn giữa các nút giữ lại rồi phản xạ lại. Dùng để ước lượng
    sai số yếu Euler bằng chia đôi bước.
    """
    rows_t, rows_w, rows_b, rows_e, rows_m = [], [], [], [], []
    for i in range(batch.n_paths):
        n = int(batch.lengths[i])
        is_event = batch.is_event[i, :n]
        regular = ~is_event
        ordinal = np.cumsum(regular) - 1
        keep = (regular & (ordinal % 2 == 0)) | is_event
        keep[-1] = True
        W = np.concatenate([[0.0], np.cumsum(batch.dW[i, :n - 1])])
        B = np.concatenate([[0.0], np.cumsum(batch.dB[i, :n - 1])])
        rows_t.append(batch.times[i, :n][keep])
        rows_w.append(np.diff(W[keep]))
        rows_b.append(np.diff(B[keep]))
        rows_e.append(is_event[keep])
        rows_m.append(batch.mark[i, :n][keep])
    if not rows_t:
        return batch
    lengths = np.array([r.size for r in rows_t], dtype=int)
    width = int(lengths.max())
    times = _pad(rows_t, width, fill_last=True)
    dW = _pad(rows_w, width - 1, fill_last=False)
    dB = _pad(rows_b, width - 1, fill_last=False)
    y, dL = _reflect(batch.params, batch.y0, times, dW, dB)
    return PathBatch(params=batch.params, y0=batch.y0, dt=2.0 * batch.dt, seed=batch.seed,
                     first_stream=batch.first_stream, times=times, y=y, dL=dL, dW=dW, dB=dB,
                     is_event=_pad(rows_e, width, fill_last=False, fill_value=False).astype(bool),
                     mark=_pad(rows_m, width, fill_last=False, fill_value=-1).astype(int), lengths=lengths)


# =========================
# Statistics
# =========================

@dataclass
class OccupationStats:
    """Tóm tắt phân phối của y tại một thời điểm và đồng nhất thức Skorokhod rời rạc"""
    max_product: float
    n_paths: int
    t: float
    mean: float
    stderr: float
    quantiles: Dict[float, float]

    def to_dict(self) -> Dict:
        return {
            'max_product': self.max_product, 'n_paths': self.n_paths, 't': self.t,
            'mean': self.mean, 'stderr': self.stderr,
            'quantiles': {str(k): v for k, v in self.quantiles.items()},
        }


def _values_at(batch: PathBatch, t: float) -> np.ndarray:
    """y tại nút cuối cùng <= t trên mỗi path"""
    index = np.sum(batch.times <= t + 1e-12, axis=1) - 1
    return batch.y[np.arange(batch.n_paths), np.maximum(index, 0)]


def occupation_check(paths: Union[PathBatch, Sequence[ReflectedPath]], t: Optional[float] = None) -> OccupationStats:
    """
    max_{path, k} (y_k - a) * dL_k (bằng 0 theo cấu trúc) cùng trung bình, sai số chuẩn
    và các phân vị của y_t (mặc định t = nút cuối).

    Raises:
        PathError: tập path rỗng
    """
    if isinstance(paths, PathBatch):
        if paths.n_paths == 0:
            raise PathError("occupation_check cần ít nhất một path")
        a = paths.params.a
        product = float(np.max((paths.y - a) * paths.dL))
        values = paths.terminal() if t is None else _values_at(paths, t)
        t_value = paths.horizon if t is None else float(t)
    else:
        paths = list(paths)
        if not paths:
            raise PathError("occupation_check cần ít nhất một path")
        product = max(float(np.max((p.y - p.a) * p.dL)) for p in paths)
        if t is None:
            values = np.array([p.y[-1] for p in paths])
            t_value = float(paths[0].times[-1])
        else:
            values = np.array([p.y[np.searchsorted(p.times, t + 1e-12) - 1] for p in paths])
            t_value = float(t)
    n = values.size
    stderr = float(np.std(values, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return OccupationStats(
        max_product=product, n_paths=n, t=t_value, mean=float(np.mean(values)), stderr=stderr,
        quantiles={qq: float(np.quantile(values, qq)) for qq in QUANTILES},
    )


def reflected_gaussian_ks(batch: PathBatch, diffusion: float = 1.0):
    """
    KS giữa y_T của batch và luật |N(y0 - a, diffusion^2 * (T - t0))| + a
    (chỉ đúng khi beta = 0 và hệ số khuếch tán hằng).

    Returns:
        scipy KstestResult (statistic, pvalue)
    """
    a = batch.params.a
    elapsed = batch.horizon - float(batch.times[0, 0])
    scale = diffusion * np.sqrt(elapsed)
    law = stats.foldnorm(c=(batch.y0 - a) / scale, loc=a, scale=scale)
    return stats.kstest(batch.terminal(), law.cdf)


def mark_chisquare(batch: PathBatch):
    """Kiểm định chi-square: tần suất mark quan sát so với w_i / mu(Z)"""
    marks = batch.mark[batch.is_event]
    n_marks = len(batch.params.marks)
    observed = np.bincount(marks, minlength=n_marks)
    expected = observed.sum() * batch.params.mark_probabilities
    return stats.chisquare(observed, expected)


def event_count_summary(batch: PathBatch) -> Tuple[float, float]:
    """(trung bình, sai số chuẩn) của số sự kiện trên mỗi path"""
    counts = batch.event_counts()
    stderr = float(np.std(counts, ddof=1) / np.sqrt(counts.size)) if counts.size > 1 else 0.0
    return float(np.mean(counts)), stderr
