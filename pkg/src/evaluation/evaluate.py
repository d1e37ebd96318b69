"""
檢查點評估：推論、指標、bootstrap 區間與子群分析
"""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from corpus import Bag, Manifest, Split, TaskKind
from errors import ConfigError, ContractError, UndefinedMetricError, ValidationError
from models import Checkpoint, Network, load_checkpoint, predict_bag_scores
from tools.batch_processor import BatchProcessor
from tools.file_tools import write_json
from .bootstrap import DEFAULT_REPLICATES, BootstrapResult, bootstrap_ci
from .metrics import PredictionSet, default_metrics, get_metric

logger = logging.getLogger(__name__)

GROUP_COLUMNS = ("group",)


@dataclass
class MetricEntry:
    point: float
    ci_low: float
    ci_high: float
    replicates: int
    degenerate: int = 0
    per_group: Optional[Dict[str, Optional[Dict[str, float]]]] = None

    @classmethod
    def from_bootstrap(cls, result: BootstrapResult) -> "MetricEntry":
        return cls(point=result.point, ci_low=result.ci_low, ci_high=result.ci_high,
                   replicates=result.replicates, degenerate=result.degenerate)


@dataclass
class MetricsReport:
    """指標名稱 → {point, ci_low, ci_high, replicates, per_group}"""
    metrics: Dict[str, MetricEntry]
    task_kind: str
    num_examples: int
    split: str
    checkpoint: Optional[str] = None
    manifest: Optional[str] = None
    repeats: int = 1
    group_by: Optional[str] = None
    notes: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["metrics"] = {name: asdict(entry) for name, entry in self.metrics.items()}
        return data

    def save(self, path: Union[str, Path]) -> Path:
        return write_json(path, self.to_dict())

    def point(self, name: str) -> float:
        return self.metrics[name].point


def bag_labels(bags: Sequence[Bag], task_kind: TaskKind) -> np.ndarray:
    if task_kind == TaskKind.MULTILABEL:
        return np.asarray([list(bag.label) for bag in bags], dtype=np.int64)
    return np.asarray([bag.label for bag in bags], dtype=np.int64)


def build_prediction_set(network: Network, bags: Sequence[Bag], manifest: Manifest,
                         processor: Optional[BatchProcessor] = None) -> PredictionSet:
    """推論並組成 PredictionSet（多張影像的 bag 取機率平均）"""
    if not bags:
        raise ContractError("沒有可評估的 bag")
    scores = predict_bag_scores(network, bags, manifest.image_size, processor=processor)
    return PredictionSet(
        bag_ids=[bag.bag_id for bag in bags],
        scores=scores,
        labels=bag_labels(bags, manifest.task_kind),
        task_kind=manifest.task_kind,
        groups=[bag.group for bag in bags],
        class_names=list(manifest.class_names),
    )


def _check_compatible(network: Network, manifest: Manifest) -> None:
    classifier = network.classifier
    if classifier is None:
        raise ContractError("評估需要 finetune 階段（帶分類頭）的檢查點")
    if classifier.num_classes != manifest.num_classes:
        raise ValidationError(
            f"檢查點有 {classifier.num_classes} 類，清單有 {manifest.num_classes} 類")
    if classifier.task_kind != manifest.task_kind:
        raise ValidationError(
            f"檢查點任務 {classifier.task_kind.value} 與清單 {manifest.task_kind.value} 不符")


def evaluate_predictions(preds: PredictionSet, metric_names: Optional[List[str]] = None,
                         replicates: int = DEFAULT_REPLICATES, seed: int = 0,
                         group_by: Optional[str] = None,
                         processor: Optional[BatchProcessor] = None) -> Dict[str, MetricEntry]:
    """對每個指標計算 bootstrap 區間；group_by 時另外計算各子群"""
    names = metric_names or default_metrics(preds.task_kind, preds.class_names)
    entries: Dict[str, MetricEntry] = {}
    groups = sorted({g for g in preds.groups if g is not None}) if group_by else []
    for name in names:
        metric_fn = get_metric(name)
        entry = MetricEntry.from_bootstrap(bootstrap_ci(preds, metric_fn, replicates, seed, processor))
        if group_by:
            entry.per_group = {}
            for group in groups:
                members = [i for i, g in enumerate(preds.groups) if g == group]
                try:
                    result = bootstrap_ci(preds.subset(members), metric_fn, replicates, seed,
                                          processor)
                    entry.per_group[group] = {"point": result.point, "ci_low": result.ci_low,
                                              "ci_high": result.ci_high, "n": len(members)}
                except UndefinedMetricError as e:
                    logger.warning("子群 %s 的 %s 無定義: %s", group, name, e)
                    entry.per_group[group] = None
        entries[name] = entry
    return entries


def evaluate_network(network: Network, manifest: Manifest, split: Union[Split, str] = Split.TEST,
                     metric_names: Optional[List[str]] = None, group_by: Optional[str] = None,
                     replicates: int = DEFAULT_REPLICATES, seed: int = 0, repeats: int = 1,
                     processor: Optional[BatchProcessor] = None) -> MetricsReport:
    """
    評估網路

    repeats > 1 時重複推論；確定性設定下結果相同，差異記錄在 notes.repeat_max_abs_diff。
    """
    if group_by is not None and group_by not in GROUP_COLUMNS:
        raise ConfigError(f"不支援的 group_by 欄位: {group_by}（可用: {', '.join(GROUP_COLUMNS)}）")
    if repeats < 1:
        raise ConfigError(f"repeats 必須 ≥ 1，收到 {repeats}")
    _check_compatible(network, manifest)
    split = Split(split) if isinstance(split, str) else split
    bags = manifest.split(split)
    preds = build_prediction_set(network, bags, manifest, processor)
    max_diff = 0.0
    for _ in range(repeats - 1):
        again = build_prediction_set(network, bags, manifest, processor)
        max_diff = max(max_diff, float(np.abs(again.scores - preds.scores).max()))

    entries = evaluate_predictions(preds, metric_names, replicates, seed, group_by, processor)
    report = MetricsReport(metrics=entries, task_kind=manifest.task_kind.value,
                           num_examples=len(preds), split=split.value,
                           manifest=manifest.source_path, repeats=repeats, group_by=group_by)
    report.notes["repeat_max_abs_diff"] = max_diff
    logger.info("評估完成：%d 個 bag，%s", len(preds),
                ", ".join(f"{k}={v.point:.4f}" for k, v in entries.items()))
    return report


def evaluate_checkpoint(checkpoint: Union[str, Path, Checkpoint], manifest: Manifest,
                        split: Union[Split, str] = Split.TEST, group_by: Optional[str] = None,
                        repeats: int = 1, replicates: int = DEFAULT_REPLICATES, seed: int = 0,
                        metric_names: Optional[List[str]] = None,
                        processor: Optional[BatchProcessor] = None) -> MetricsReport:
    """
    載入 finetune 檢查點並在清單上評估（可用於不再微調的替代清單）

    Raises:
        ValidationError: 檢查點與清單的類別數不符
    """
    source = None
    if not isinstance(checkpoint, Checkpoint):
        source = str(checkpoint)
        checkpoint = load_checkpoint(checkpoint)
    network = checkpoint.build_network()
    report = evaluate_network(network, manifest, split, metric_names, group_by, replicates, seed,
                              repeats, processor)
    report.checkpoint = source
    return report


def predictions_for_checkpoint(checkpoint: Union[str, Path], manifest: Manifest,
                               split: Union[Split, str] = Split.TEST,
                               processor: Optional[BatchProcessor] = None) -> PredictionSet:
    """compare 子命令使用：只推論不計算指標"""
    network = load_checkpoint(checkpoint).build_network()
    _check_compatible(network, manifest)
    split = Split(split) if isinstance(split, str) else split
    return build_prediction_set(network, manifest.split(split), manifest, processor)


__all__ = [
    'MetricEntry',
    'MetricsReport',
    'bag_labels',
    'build_prediction_set',
    'evaluate_predictions',
    'evaluate_network',
    'evaluate_checkpoint',
    'predictions_for_checkpoint',
]
