#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Target-zone liquidation toolkit.

Giải bài toán HJB (Neumann, điều kiện cuối kỳ dị) của bài toán thanh lý danh mục
trong mô hình target zone, mô phỏng quá trình phản xạ + dark pool, chạy chiến lược
feedback tối ưu và kiểm chứng Monte Carlo.
"""

__version__ = "0.3.0"


class TargetZoneError(Exception):
    """Lỗi gốc của toàn bộ package"""
