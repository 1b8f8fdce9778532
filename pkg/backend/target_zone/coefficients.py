#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Coefficient families: các hàm hệ số tất định (t, y) -> giá trị.

Mọi family đều vector hóa theo numpy: t, y có thể là số hoặc mảng cùng shape
(broadcast được). Mỗi family có to_dict() để ghi lại vào file cấu hình.
"""

import math
import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Union

import numpy as np

from . import TargetZoneError

logger = logging.getLogger(__name__)

Number = Union[int, float]


class CoefficientError(TargetZoneError):
    """Hệ số không hợp lệ hoặc không tính được"""


def _broadcast(t, y):
    t_arr, y_arr = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(y, dtype=float))
    return t_arr, y_arr


@dataclass(frozen=True)
class Constant:
    """Hệ số hằng"""
    value: float

    def __call__(self, t, y):
        t_arr, _ = _broadcast(t, y)
        return np.full(t_arr.shape, float(self.value))

    def to_dict(self) -> Any:
        return float(self.value)


@dataclass(frozen=True)
class Affine:
    """
    Hệ số affine theo y, bị chặn trong [lower, upper]:
        value = clip(intercept + slope * (y - origin), lower, upper)
    """
    intercept: float
    slope: float
    origin: float = 0.0
    lower: float = -math.inf
    upper: float = math.inf

    def __call__(self, t, y):
        _, y_arr = _broadcast(t, y)
        raw = self.intercept + self.slope * (y_arr - self.origin)
        return np.clip(raw, self.lower, self.upper)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'family': 'affine',
            'intercept': float(self.intercept),
            'slope': float(self.slope),
            'origin': float(self.origin),
            'lower': float(self.lower),
            'upper': float(self.upper),
        }


@dataclass(frozen=True)
class Sinusoidal:
    """Hệ số dao động theo thời gian: mean + amplitude * sin(2*pi*frequency*t + phase)"""
    mean: float
    amplitude: float
    frequency: float = 1.0
    phase: float = 0.0

    def __call__(self, t, y):
        t_arr, _ = _broadcast(t, y)
        return self.mean + self.amplitude * np.sin(2.0 * np.pi * self.frequency * t_arr + self.phase)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'family': 'sinusoidal',
            'mean': float(self.mean),
            'amplitude': float(self.amplitude),
            'frequency': float(self.frequency),
            'phase': float(self.phase),
        }


@dataclass(frozen=True)
class Scaled:
    """factor * base(t, y): dùng để dựng cặp hệ số có thứ tự cho comparison harness"""
    base: Any
    factor: float

    def __call__(self, t, y):
        return self.factor * np.asarray(self.base(t, y), dtype=float)

    def to_dict(self) -> Dict[str, Any]:
        return {'family': 'scaled', 'factor': float(self.factor), 'base': coefficient_to_spec(self.base)}


FAMILIES = ('constant', 'affine', 'sinusoidal', 'scaled')


def parse_coefficient(raw: Any, Lambda: Optional[float] = None):
    """
    Dựng hệ số từ một mục cấu hình.

    Args:
        raw: số (hằng), hoặc dict có khóa 'family'
        Lambda: cận đều Λ; family affine mặc định bị chặn trong [-Λ, Λ]

    Returns:
        Đối tượng hệ số gọi được (t, y)
    """
    if isinstance(raw, bool):
        raise CoefficientError(f"Hệ số không hợp lệ: {raw!r}")
    if isinstance(raw, (int, float)):
        return Constant(float(raw))
    if not isinstance(raw, dict):
        raise CoefficientError(f"Hệ số không hợp lệ: {raw!r}")

    family = raw.get('family', 'constant')
    try:
        if family == 'constant':
            return Constant(float(raw['value']))
        if family == 'affine':
            bound = float(Lambda) if Lambda is not None else math.inf
            return Affine(
                intercept=float(raw.get('intercept', 0.0)),
                slope=float(raw.get('slope', 0.0)),
                origin=float(raw.get('origin', 0.0)),
                lower=float(raw.get('lower', -bound)),
                upper=float(raw.get('upper', bound)),
            )
        if family == 'sinusoidal':
            return Sinusoidal(
                mean=float(raw['mean']),
                amplitude=float(raw.get('amplitude', 0.0)),
                frequency=float(raw.get('frequency', 1.0)),
                phase=float(raw.get('phase', 0.0)),
            )
        if family == 'scaled':
            return Scaled(parse_coefficient(raw['base'], Lambda), float(raw['factor']))
    except KeyError as e:
        raise CoefficientError(f"Family '{family}' thiếu khóa {e}") from e
    except (TypeError, ValueError) as e:
        raise CoefficientError(f"Family '{family}' có giá trị không hợp lệ: {e}") from e

    raise CoefficientError(f"Family không hỗ trợ: '{family}' (hỗ trợ: {', '.join(FAMILIES)})")


def coefficient_to_spec(coefficient) -> Any:
    """Chiều ngược lại của parse_coefficient"""
    to_dict = getattr(coefficient, 'to_dict', None)
    if to_dict is None:
        raise CoefficientError(f"Hệ số {coefficient!r} không serialize được (hàm tự viết)")
    return to_dict()
