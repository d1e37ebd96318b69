"""
批量處理工具
以執行緒池並行處理獨立工作（影像解碼與資料增強），結果依輸入順序回傳
"""

import concurrent.futures
import logging
import os
import time
from typing import Callable, List, Optional, Sequence, TypeVar

from errors import ConfigError

logger = logging.getLogger(__name__)

THREADS_ENV = "MICLE_THREADS"

T = TypeVar("T")
R = TypeVar("R")


def resolve_max_workers(value: Optional[str] = None) -> int:
    """
    由 MICLE_THREADS 決定並行數量

    Args:
        value: 環境變數值（未提供時讀取環境）

    Returns:
        int: 並行數量；未設定時為 CPU 核心數，1 代表序列參考路徑
    """
    if value is None:
        value = os.environ.get(THREADS_ENV)
    if value is None or value.strip() == "":
        return os.cpu_count() or 1
    try:
        workers = int(value)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} 必須是正整數，收到 {value!r}")
    if workers < 1:
        raise ConfigError(f"{THREADS_ENV} 必須是正整數，收到 {value!r}")
    return workers


class BatchProcessor:
    """批量處理器"""

    def __init__(self, max_workers: Optional[int] = None):
        self.max_workers = max_workers if max_workers is not None else resolve_max_workers()
        self.processed = 0
        self.total_seconds = 0.0

    def map(self, func: Callable[[T], R], items: Sequence[T]) -> List[R]:
        """
        對每個項目套用 func，回傳與輸入同順序的結果

        每個工作只依賴自身參數（例如逐樣本種子），因此結果與並行數量無關。
        任一工作失敗時，拋出輸入順序中第一個失敗的例外。
        """
        start_time = time.perf_counter()
        if self.max_workers <= 1 or len(items) <= 1:
            results = [func(item) for item in items]
        else:
            with concurrent.futures.ThreadPoolExecutor(max_workers=self.max_workers) as executor:
                futures = [executor.submit(func, item) for item in items]
                results = [future.result() for future in futures]
        self.processed += len(items)
        self.total_seconds += time.perf_counter() - start_time
        return results

    def get_stats(self) -> dict:
        return {
            "max_workers": self.max_workers,
            "processed": self.processed,
            "total_seconds": round(self.total_seconds, 3),
        }


# 創建預設實例（延遲建立以便測試時調整環境變數）
_default_batch_processor: Optional[BatchProcessor] = None


def default_batch_processor() -> BatchProcessor:
    global _default_batch_processor
    if _default_batch_processor is None:
        _default_batch_processor = BatchProcessor()
        logger.debug("批量處理器並行數: %d", _default_batch_processor.max_workers)
    return _default_batch_processor


def parallel_map(func: Callable[[T], R], items: Sequence[T],
                 processor: Optional[BatchProcessor] = None) -> List[R]:
    """便捷函數：使用預設處理器並行 map"""
    return (processor or default_batch_processor()).map(func, items)


__all__ = ['THREADS_ENV', 'resolve_max_workers', 'BatchProcessor',
           'default_batch_processor', 'parallel_map']
