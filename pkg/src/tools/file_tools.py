"""
檔案操作核心工具模組
提供路徑解析、JSON / JSON-Lines 讀寫與原子寫入
"""

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple, Union

PathLike = Union[str, Path]


class FileTools:
    """檔案操作工具類"""

    def __init__(self, base_path: Optional[str] = None):
        """
        初始化檔案工具

        Args:
            base_path: 基礎路徑，如果未提供則使用當前工作目錄
        """
        self.base_path = Path(base_path) if base_path else Path.cwd()

    def get_current_path(self) -> str:
        """取得目前的工作路徑"""
        return str(self.base_path.absolute())

    def resolve_path(self, file_path: PathLike, relative_to: Optional[PathLike] = None) -> Path:
        """
        解析檔案路徑，處理相對路徑和絕對路徑

        Args:
            file_path: 檔案路徑
            relative_to: 相對路徑的基準目錄（預設為 base_path）

        Returns:
            Path: 解析後的完整路徑
        """
        path = Path(file_path)
        if path.is_absolute():
            return path
        base = Path(relative_to) if relative_to is not None else self.base_path
        return base / path

    def ensure_dir(self, dir_path: PathLike) -> Path:
        """確保目錄存在"""
        resolved = self.resolve_path(dir_path)
        resolved.mkdir(parents=True, exist_ok=True)
        return resolved

    def write_bytes(self, file_path: PathLike, payload: bytes) -> Path:
        """
        原子寫入位元組：先寫暫存檔再改名，避免中斷時留下半截檔案

        Args:
            file_path: 目標路徑
            payload: 內容

        Returns:
            Path: 寫入的完整路徑
        """
        resolved = self.resolve_path(file_path)
        resolved.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(dir=str(resolved.parent), prefix=f".{resolved.name}.")
        try:
            with os.fdopen(fd, 'wb') as f:
                f.write(payload)
            os.replace(tmp_name, resolved)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise
        return resolved

    def write_json(self, file_path: PathLike, data: Any) -> Path:
        """以固定格式（排序鍵、兩格縮排）寫出 JSON"""
        text = json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
        return self.write_bytes(file_path, text.encode('utf-8'))

    def read_json(self, file_path: PathLike) -> Any:
        resolved = self.resolve_path(file_path)
        if not resolved.exists():
            raise FileNotFoundError(f"檔案不存在: {resolved}")
        with open(resolved, 'r', encoding='utf-8') as f:
            return json.load(f)

    def iter_jsonl(self, file_path: PathLike) -> Iterator[Tuple[int, Optional[Dict[str, Any]], str]]:
        """
        逐行讀取 JSON-Lines

        Yields:
            Tuple[int, Optional[Dict], str]: (行號, 解析結果或 None, 原始行)；空行略過
        """
        resolved = self.resolve_path(file_path)
        if not resolved.exists():
            raise FileNotFoundError(f"檔案不存在: {resolved}")
        with open(resolved, 'r', encoding='utf-8') as f:
            for line_number, line in enumerate(f, start=1):
                stripped = line.strip()
                if not stripped:
                    continue
                try:
                    yield line_number, json.loads(stripped), stripped
                except json.JSONDecodeError:
                    yield line_number, None, stripped

    def write_jsonl(self, file_path: PathLike, records: List[Dict[str, Any]]) -> Path:
        lines = [json.dumps(r, sort_keys=True, ensure_ascii=False) for r in records]
        return self.write_bytes(file_path, ("\n".join(lines) + "\n").encode('utf-8'))


# 創建預設實例
default_file_tools = FileTools()


# 提供便捷的函數介面
def resolve_path(file_path: PathLike, relative_to: Optional[PathLike] = None) -> Path:
    """解析路徑"""
    return default_file_tools.resolve_path(file_path, relative_to)


def write_json(file_path: PathLike, data: Any) -> Path:
    """寫出 JSON"""
    return default_file_tools.write_json(file_path, data)


def read_json(file_path: PathLike) -> Any:
    """讀取 JSON"""
    return default_file_tools.read_json(file_path)


def write_bytes(file_path: PathLike, payload: bytes) -> Path:
    """原子寫入"""
    return default_file_tools.write_bytes(file_path, payload)
