"""
工具模組初始化檔案
"""

from .file_tools import (
    FileTools,
    default_file_tools,
    resolve_path,
    read_json,
    write_json,
    write_bytes,
)
from .batch_processor import BatchProcessor, default_batch_processor, parallel_map, resolve_max_workers

__all__ = [
    'FileTools',
    'default_file_tools',
    'resolve_path',
    'read_json',
    'write_json',
    'write_bytes',
    'BatchProcessor',
    'default_batch_processor',
    'parallel_map',
    'resolve_max_workers',
]
