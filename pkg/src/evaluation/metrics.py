"""
評估指標：top-k 準確率、平均 top-k 敏感度、ROC-AUC 與平均 AUC
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from sklearn.metrics import roc_auc_score

from corpus.manifest import TaskKind
from errors import ConfigError, DimensionError, NumericError, UndefinedMetricError

logger = logging.getLogger(__name__)

MetricFn = Callable[["PredictionSet"], float]


@dataclass
class PredictionSet:
    """
    每個 bag 一筆預測

    Args:
        bag_ids: bag 識別碼
        scores: n×K 分數（有限值）
        labels: 單標籤為長度 n 的類別索引；多標籤為 n×K 的 0/1
        groups: 子群標記
    """
    bag_ids: List[str]
    scores: np.ndarray
    labels: np.ndarray
    task_kind: TaskKind = TaskKind.MULTICLASS
    groups: List[Optional[str]] = field(default_factory=list)
    class_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.bag_ids)
        if self.scores.ndim != 2 or self.scores.shape[0] != n:
            raise DimensionError(f"scores 形狀 {self.scores.shape} 與 {n} 個 bag 不符")
        expected = (n,) if self.task_kind == TaskKind.MULTICLASS else self.scores.shape
        if self.labels.shape != expected:
            raise DimensionError(f"labels 形狀 {self.labels.shape} 應為 {expected}")
        if not np.all(np.isfinite(self.scores)):
            raise NumericError("預測分數含非有限值")
        if not self.groups:
            self.groups = [None] * n
        if not self.class_names:
            self.class_names = [f"class_{i}" for i in range(self.num_classes)]

    def __len__(self) -> int:
        return len(self.bag_ids)

    @property
    def num_classes(self) -> int:
        return int(self.scores.shape[1])

    def subset(self, indices: Sequence[int]) -> "PredictionSet":
        """依索引取子集（可重複，bootstrap 使用）"""
        indices = np.asarray(indices, dtype=np.int64)
        return PredictionSet(
            bag_ids=[self.bag_ids[i] for i in indices],
            scores=self.scores[indices],
            labels=self.labels[indices],
            task_kind=self.task_kind,
            groups=[self.groups[i] for i in indices],
            class_names=list(self.class_names),
        )


@dataclass
class SensitivityResult:
    per_class: Dict[int, float]
    average: float
    classes_averaged: int


@dataclass
class MeanAucResult:
    value: float
    per_class: Dict[int, float]
    skipped: List[int]


def _require_multiclass(preds: PredictionSet, name: str) -> None:
    if preds.task_kind != TaskKind.MULTICLASS:
        raise ConfigError(f"{name} 只適用於單標籤預測")


def _check_k(preds: PredictionSet, k: int) -> None:
    if k < 1 or k > preds.num_classes:
        raise ConfigError(f"k={k} 必須在 1..{preds.num_classes}")


def topk_hits(scores: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """真實類別是否落在前 k 名；分數相同時類別索引小者優先"""
    order = np.argsort(-scores, axis=1, kind="stable")
    return (order[:, :k] == labels[:, None]).any(axis=1)


def topk_accuracy(preds: PredictionSet, k: int) -> float:
    _require_multiclass(preds, "topk_accuracy")
    _check_k(preds, k)
    if len(preds) == 0:
        raise UndefinedMetricError("topk_accuracy: 沒有任何預測")
    return float(topk_hits(preds.scores, preds.labels, k).mean())


def topk_sensitivity(preds: PredictionSet, k: int,
                     skip_classes: Sequence[int] = ()) -> SensitivityResult:
    """
    逐類別的 top-k 召回率與巨觀平均（只平均測試集中出現的類別）

    Args:
        skip_classes: 不納入平均的類別索引（例如「其他」類）
    """
    _require_multiclass(preds, "topk_sensitivity")
    _check_k(preds, k)
    hits = topk_hits(preds.scores, preds.labels, k)
    per_class: Dict[int, float] = {}
    for c in range(preds.num_classes):
        members = preds.labels == c
        if members.any() and c not in skip_classes:
            per_class[c] = float(hits[members].mean())
    if not per_class:
        raise UndefinedMetricError("topk_sensitivity: 沒有任何類別有樣本")
    average = float(np.mean(list(per_class.values())))
    return SensitivityResult(per_class=per_class, average=average, classes_averaged=len(per_class))


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """
    一對其餘的 ROC-AUC（sklearn），平手給 ½ 分

    Raises:
        UndefinedMetricError: 只有單一類別
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DimensionError(f"roc_auc: scores {scores.shape} 與 labels {labels.shape} 不符")
    positive = (labels == 1).astype(np.int64)
    n_pos = int(positive.sum())
    if n_pos == 0 or n_pos == len(positive):
        raise UndefinedMetricError("roc_auc: 需要同時有正例與負例")
    return float(roc_auc_score(positive, scores))


def _per_class_auc(preds: PredictionSet, targets: np.ndarray) -> MeanAucResult:
    per_class: Dict[int, float] = {}
    skipped: List[int] = []
    for c in range(preds.num_classes):
        try:
            per_class[c] = roc_auc(preds.scores[:, c], targets[:, c])
        except UndefinedMetricError:
            skipped.append(c)
    if not per_class:
        raise UndefinedMetricError("所有類別都只有單一標籤，AUC 無定義")
    return MeanAucResult(value=float(np.mean(list(per_class.values()))), per_class=per_class,
                         skipped=skipped)


def mean_auc(preds: PredictionSet) -> MeanAucResult:
    """多標籤：各類別 AUC 的不加權平均，略過單一標籤的類別"""
    if preds.task_kind != TaskKind.MULTILABEL:
        raise ConfigError("mean_auc 只適用於多標籤預測")
    return _per_class_auc(preds, preds.labels)


def multiclass_auc(preds: PredictionSet) -> MeanAucResult:
    """單標籤：一對其餘 AUC 的不加權平均"""
    _require_multiclass(preds, "multiclass_auc")
    targets = (preds.labels[:, None] == np.arange(preds.num_classes)[None, :]).astype(np.int64)
    return _per_class_auc(preds, targets)


# ---------------------------------------------------------------------------
# 指標註冊表
# ---------------------------------------------------------------------------

METRICS: Dict[str, MetricFn] = {
    "top1": lambda p: topk_accuracy(p, 1),
    "top3": lambda p: topk_accuracy(p, 3),
    "top1_sensitivity": lambda p: topk_sensitivity(p, 1).average,
    "top3_sensitivity": lambda p: topk_sensitivity(p, 3).average,
    "auc": lambda p: multiclass_auc(p).value,
    "mean_auc": lambda p: mean_auc(p).value,
}


def get_metric(name: str) -> MetricFn:
    if name in METRICS:
        return METRICS[name]
    if name.startswith("auc[") and name.endswith("]"):
        class_name = name[4:-1]

        def single_class_auc(preds: PredictionSet) -> float:
            if class_name not in preds.class_names:
                raise ConfigError(f"未知的類別: {class_name}")
            c = preds.class_names.index(class_name)
            if preds.task_kind == TaskKind.MULTILABEL:
                targets = preds.labels[:, c]
            else:
                targets = (preds.labels == c).astype(np.int64)
            return roc_auc(preds.scores[:, c], targets)

        return single_class_auc
    raise ConfigError(f"未知的指標: {name}（可用: {', '.join(METRICS)}、auc[<類別>]）")


def default_metrics(task_kind: TaskKind, class_names: Sequence[str]) -> List[str]:
    """單標籤：top1/top3/敏感度/AUC；多標籤：mean_auc 與逐類別 AUC"""
    if task_kind == TaskKind.MULTILABEL:
        return ["mean_auc"] + [f"auc[{name}]" for name in class_names]
    names = ["top1", "top1_sensitivity"]
    if len(class_names) >= 3:
        names += ["top3", "top3_sensitivity"]
    return names + ["auc"]


def selection_metric(task_kind: TaskKind) -> str:
    """驗證集選模指標：單標籤 top1，多標籤 mean_auc"""
    return "mean_auc" if task_kind == TaskKind.MULTILABEL else "top1"


__all__ = [
    'PredictionSet',
    'SensitivityResult',
    'MeanAucResult',
    'topk_hits',
    'topk_accuracy',
    'topk_sensitivity',
    'roc_auc',
    'mean_auc',
    'multiclass_auc',
    'METRICS',
    'get_metric',
    'default_metrics',
    'selection_metric',
]
