"""
無母數 bootstrap：百分位信賴區間與成對差異檢定
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import ContractError, UndefinedMetricError, ValidationError
from tools.batch_processor import BatchProcessor, parallel_map
from .metrics import MetricFn, PredictionSet

logger = logging.getLogger(__name__)

DEFAULT_REPLICATES = 1000
MAX_DEGENERATE_FRACTION = 0.5


@dataclass
class BootstrapResult:
    point: float
    ci_low: float
    ci_high: float
    replicates: int
    degenerate: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PairedResult:
    delta: float
    ci_low: float
    ci_high: float
    significant_at_05: bool
    replicates: int
    degenerate: int

    def to_dict(self) -> dict:
        return asdict(self)


def replicate_indices(n: int, seed: int, replicate: int) -> np.ndarray:
    """第 replicate 次重抽的索引，只由 (seed, replicate) 決定"""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(replicate)]))
    return rng.integers(0, n, size=n)


def percentile_interval(values: Sequence[float]) -> Tuple[float, float]:
    """
    95% 百分位區間：排序後取位置 ⌊0.025·R⌋ 與 min(⌈0.975·R⌉, R−1)（0 起算）
    """
    ordered = np.sort(np.asarray(values, dtype=np.float64))
    count = len(ordered)
    if count == 0:
        raise UndefinedMetricError("沒有有效的 bootstrap 重抽結果")
    low = ordered[int(math.floor(0.025 * count))]
    high = ordered[min(int(math.ceil(0.975 * count)), count - 1)]
    return float(low), float(high)


def _collect(evaluate, replicates: int, processor: Optional[BatchProcessor]) -> Tuple[List[float], int]:
    def run(replicate: int) -> Optional[float]:
        try:
            return evaluate(replicate)
        except UndefinedMetricError:
            return None

    results = parallel_map(run, list(range(replicates)), processor)
    valid = [value for value in results if value is not None]
    degenerate = replicates - len(valid)
    if degenerate > MAX_DEGENERATE_FRACTION * replicates:
        raise UndefinedMetricError(
            f"{degenerate}/{replicates} 次 bootstrap 重抽的指標無定義（超過 50%）")
    if degenerate:
        logger.warning("略過 %d/%d 次指標無定義的 bootstrap 重抽", degenerate, replicates)
    return valid, degenerate


def bootstrap_ci(preds: PredictionSet, metric_fn: MetricFn, replicates: int = DEFAULT_REPLICATES,
                 seed: int = 0, processor: Optional[BatchProcessor] = None) -> BootstrapResult:
    """
    有放回重抽樣本並計算 95% 百分位區間

    Raises:
        ContractError: 預測為空
        UndefinedMetricError: 超過一半的重抽指標無定義
    """
    if len(preds) == 0:
        raise ContractError("bootstrap_ci 需要非空的預測")
    if replicates < 1:
        raise ContractError(f"replicates 必須 ≥ 1，收到 {replicates}")
    point = metric_fn(preds)
    n = len(preds)
    valid, degenerate = _collect(
        lambda r: metric_fn(preds.subset(replicate_indices(n, seed, r))), replicates, processor)
    low, high = percentile_interval(valid)
    return BootstrapResult(point=float(point), ci_low=low, ci_high=high, replicates=replicates,
                           degenerate=degenerate)


def align_predictions(preds_a: PredictionSet, preds_b: PredictionSet) -> PredictionSet:
    """把 b 重新排列成與 a 相同的 bag 順序"""
    if len(preds_a) != len(preds_b) or set(preds_a.bag_ids) != set(preds_b.bag_ids):
        raise ValidationError("兩組預測的 bag_id 不一致")
    position = {bag_id: i for i, bag_id in enumerate(preds_b.bag_ids)}
    return preds_b.subset([position[bag_id] for bag_id in preds_a.bag_ids])


def paired_significance(preds_a: PredictionSet, preds_b: PredictionSet, metric_fn: MetricFn,
                        replicates: int = DEFAULT_REPLICATES, seed: int = 0,
                        processor: Optional[BatchProcessor] = None) -> PairedResult:
    """
    成對 bootstrap：兩個模型使用相同的重抽索引，delta = metric(a) − metric(b)

    Raises:
        ValidationError: bag_id 不一致
    """
    preds_b = align_predictions(preds_a, preds_b)
    n = len(preds_a)
    if n == 0:
        raise ContractError("paired_significance 需要非空的預測")
    delta = metric_fn(preds_a) - metric_fn(preds_b)

    def replicate_delta(r: int) -> float:
        indices = replicate_indices(n, seed, r)
        return metric_fn(preds_a.subset(indices)) - metric_fn(preds_b.subset(indices))

    valid, degenerate = _collect(replicate_delta, replicates, processor)
    low, high = percentile_interval(valid)
    return PairedResult(delta=float(delta), ci_low=low, ci_high=high,
                        significant_at_05=not (low <= 0.0 <= high), replicates=replicates,
                        degenerate=degenerate)


__all__ = [
    'DEFAULT_REPLICATES',
    'BootstrapResult',
    'PairedResult',
    'replicate_indices',
    'percentile_interval',
    'bootstrap_ci',
    'align_predictions',
    'paired_significance',
]
