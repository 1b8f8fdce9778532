import io
import json
import os
import sqlite3
import logging
from datetime import datetime
from typing import Optional, Union

import numpy as np

from target_zone.hjb_solver import Grid, ValueSurface

logger = logging.getLogger(__name__)

# Cache nhị phân của ValueSurface; đổi định dạng blob thì tăng version
CACHE_FORMAT_VERSION = 1
DB_FILENAME = 'surfaces.db'

# Mặc định nằm cạnh thư mục output; /tmp khi thư mục hiện tại chỉ đọc
if os.access('.', os.W_OK):
    DB_PATH = DB_FILENAME
else:
    DB_PATH = os.path.join('/tmp', DB_FILENAME)


def _connect(db_path: Optional[str]) -> sqlite3.Connection:
    conn = sqlite3.connect(db_path or DB_PATH)
    conn.execute("PRAGMA encoding = 'UTF-8'")
    return conn


def _to_blob(array: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    np.save(buffer, np.asarray(array, dtype=float), allow_pickle=False)
    return buffer.getvalue()


def _from_blob(blob: bytes) -> np.ndarray:
    return np.load(io.BytesIO(blob), allow_pickle=False)


def surface_key(config_hash: str, truncation_level: Union[float, str]) -> str:
    """Khóa cache: hash cấu hình + mức cắt cụt (hoặc 'ladder-limit')"""
    level = truncation_level if isinstance(truncation_level, str) else repr(float(truncation_level))
    return f"{config_hash}:{level}"


def init_db(db_path: Optional[str] = None):
    """Khởi tạo database và tạo bảng nếu chưa tồn tại"""
    conn = _connect(db_path)
    cursor = conn.cursor()

    cursor.execute('''
        CREATE TABLE IF NOT EXISTS surfaces (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            surface_key TEXT UNIQUE NOT NULL,
            config_hash TEXT NOT NULL,
            truncation_level TEXT NOT NULL,
            format_version INTEGER NOT NULL,
            a REAL NOT NULL,
            y_max REAL NOT NULL,
            n_space INTEGER NOT NULL,
            t_grid BLOB NOT NULL,
            vals BLOB NOT NULL,
            metadata TEXT,
            created_at TEXT NOT NULL
        )
    ''')

    conn.commit()
    conn.close()
    logger.debug(f"Surface cache initialized: {db_path or DB_PATH}")


def _metadata(surface: ValueSurface) -> str:
    return json.dumps({
        'boundary_right': surface.boundary_right,
        'neumann_order': surface.neumann_order,
        'psi_zero': surface.psi_zero,
        'residual': surface.residual,
        'error_estimate': surface.error_estimate,
        'ladder_gap': surface.ladder_gap,
        'rung_level': surface.rung_level,
    })


def save_surface(config_hash: str, surface: ValueSurface, db_path: Optional[str] = None) -> bool:
    """Lưu surface vào cache (ghi đè nếu đã có cùng khóa)"""
    try:
        conn = _connect(db_path)
        cursor = conn.cursor()

        grid = surface.grid
        level = surface.truncation_level
        cursor.execute('''
            INSERT OR REPLACE INTO surfaces
            (surface_key, config_hash, truncation_level, format_version, a, y_max, n_space,
             t_grid, vals, metadata, created_at)
            VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
        ''', (surface_key(config_hash, level), config_hash,
              level if isinstance(level, str) else repr(float(level)), CACHE_FORMAT_VERSION,
              float(grid.a), float(grid.y_max), int(grid.n_space),
              _to_blob(grid.t_grid), _to_blob(surface.values), _metadata(surface),
              datetime.now().isoformat()))

        conn.commit()
        conn.close()
        return True
    except Exception as e:
        logger.error(f"❌ Lỗi khi lưu surface: {e}", exc_info=True)
        return False


def get_surface(config_hash: str, truncation_level: Union[float, str],
                db_path: Optional[str] = None) -> Optional[ValueSurface]:
    """
    Lấy surface từ cache.

    Returns:
        ValueSurface, hoặc None nếu không có, sai version hoặc lỗi đọc
    """
    try:
        conn = _connect(db_path)
        conn.row_factory = sqlite3.Row
        cursor = conn.cursor()

        cursor.execute('SELECT * FROM surfaces WHERE surface_key = ?',
                       (surface_key(config_hash, truncation_level),))
        row = cursor.fetchone()
        conn.close()

        if row is None:
            return None
        if row['format_version'] != CACHE_FORMAT_VERSION:
            logger.warning(f"⚠️ Bỏ qua surface cache version {row['format_version']} "
                           f"(cần {CACHE_FORMAT_VERSION}): {row['surface_key']}")
            return None

        grid = Grid(a=row['a'], y_max=row['y_max'], n_space=row['n_space'], t_grid=_from_blob(row['t_grid']))
        level = row['truncation_level']
        try:
            level = float(level)
        except ValueError:
            pass
        metadata = json.loads(row['metadata']) if row['metadata'] else {}
        return ValueSurface(grid=grid, values=_from_blob(row['vals']), truncation_level=level, **metadata)
    except Exception as e:
        logger.error(f"❌ Lỗi khi đọc surface: {e}", exc_info=True)
        return None

