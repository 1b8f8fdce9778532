#!/usr/bin/env python3
"""
Entry point ở thư mục gốc
Thêm backend vào Python path rồi export app và nhóm lệnh liqzone từ backend/app.py

Dùng:
    python app.py solve --config configs/oracle.yaml --out out
    flask --app app verify --config configs/oracle.yaml
"""

import sys
import os

backend_path = os.path.abspath(os.path.join(os.path.dirname(__file__), 'backend'))

# Thêm backend vào Python path TRƯỚC KHI import
if backend_path not in sys.path:
    sys.path.insert(0, backend_path)

# Import từ backend - dùng importlib để tránh trùng tên module app
import importlib.util
spec = importlib.util.spec_from_file_location("backend_app", os.path.join(backend_path, "app.py"))
backend_app_module = importlib.util.module_from_spec(spec)
spec.loader.exec_module(backend_app_module)

create_app = backend_app_module.create_app
cli = backend_app_module.cli
app = create_app()

if __name__ == '__main__':
    cli()
