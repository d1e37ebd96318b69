"""
資料清單模組
負責 JSON-Lines 清單的載入、驗證、儲存與標籤比例子集
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from errors import ConfigError, ManifestParseError, ManifestValidationError, ValidationError
from tools.file_tools import FileTools, read_json, write_json

logger = logging.getLogger(__name__)

Label = Union[int, Tuple[int, ...]]

_RECORD_KEYS = {"bag_id", "images", "label", "split", "group"}
_REQUIRED_KEYS = ("bag_id", "images", "label", "split")


class TaskKind(Enum):
    """任務類型"""
    MULTICLASS = "multiclass"
    MULTILABEL = "multilabel"


class Split(Enum):
    """資料切分"""
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


@dataclass(frozen=True)
class Bag:
    """同一病例（病患）的一組影像"""
    bag_id: str
    image_refs: Tuple[str, ...]
    label: Label
    split: Split
    group: Optional[str] = None

    @property
    def M(self) -> int:  # noqa: N802
        return len(self.image_refs)

    @property
    def class_key(self) -> Label:
        """分層抽樣用的類別鍵：單標籤為類別索引，多標籤為整個位元組合"""
        return self.label

    def to_record(self, base_dir: Optional[Path] = None) -> Dict[str, Any]:
        images = [_relative_ref(ref, base_dir) for ref in self.image_refs]
        record: Dict[str, Any] = {
            "bag_id": self.bag_id,
            "images": images,
            "label": list(self.label) if isinstance(self.label, tuple) else self.label,
            "split": self.split.value,
        }
        if self.group is not None:
            record["group"] = self.group
        return record


@dataclass(frozen=True)
class Manifest:
    """已驗證的資料清單"""
    bags: Tuple[Bag, ...]
    class_names: Tuple[str, ...]
    task_kind: TaskKind
    image_size: Tuple[int, int]
    source_path: Optional[str] = field(default=None, compare=False)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def bag_ids(self) -> List[str]:
        return [bag.bag_id for bag in self.bags]

    def split(self, split: Union[Split, str]) -> List[Bag]:
        """取出某個切分的 bag（保留清單順序）"""
        split = Split(split) if isinstance(split, str) else split
        return [bag for bag in self.bags if bag.split == split]

    def split_counts(self) -> Dict[str, int]:
        return {s.value: len(self.split(s)) for s in Split}

    def get(self, bag_id: str) -> Bag:
        for bag in self.bags:
            if bag.bag_id == bag_id:
                return bag
        raise KeyError(bag_id)

    def with_bags(self, bags: Sequence[Bag]) -> "Manifest":
        return replace(self, bags=tuple(bags))

    def save(self, path: Union[str, Path]) -> Path:
        """寫出 JSONL 清單與 sidecar 中繼資料（路徑相對於清單所在目錄）"""
        path = Path(path)
        FileTools().write_jsonl(path, [bag.to_record(path.parent) for bag in self.bags])
        write_json(meta_path_for(path), {
            "class_names": list(self.class_names),
            "image_size": list(self.image_size),
            "task_kind": self.task_kind.value,
        })
        return path


@dataclass(frozen=True)
class LabelFractionPlan:
    """標籤比例抽樣計畫"""
    fraction: float
    seed: int
    selected_bag_ids: Tuple[str, ...]


def meta_path_for(manifest_path: Union[str, Path]) -> Path:
    """清單對應的 sidecar 路徑：<stem>.meta.json"""
    manifest_path = Path(manifest_path)
    return manifest_path.with_name(f"{manifest_path.stem}.meta.json")


def _relative_ref(ref: str, base_dir: Optional[Path]) -> str:
    if base_dir is None:
        return ref
    try:
        return Path(ref).relative_to(base_dir.resolve()).as_posix()
    except ValueError:
        try:
            return Path(ref).relative_to(base_dir).as_posix()
        except ValueError:
            return ref


def _parse_label(raw: Any, path: str, line_number: int) -> Label:
    if isinstance(raw, bool):
        raise ManifestParseError(path, line_number, "label 必須是整數或 0/1 串列")
    if isinstance(raw, int):
        if raw < 0:
            raise ManifestParseError(path, line_number, f"label 不可為負數: {raw}")
        return raw
    if isinstance(raw, list) and raw and all(isinstance(v, int) and not isinstance(v, bool)
                                             and v in (0, 1) for v in raw):
        return tuple(raw)
    raise ManifestParseError(path, line_number, f"label 必須是整數或 0/1 串列，收到 {raw!r}")


def _parse_record(record: Any, path: str, line_number: int, base_dir: Path) -> Bag:
    if not isinstance(record, dict):
        raise ManifestParseError(path, line_number, "每一行必須是 JSON 物件")
    missing = [key for key in _REQUIRED_KEYS if key not in record]
    if missing:
        raise ManifestParseError(path, line_number, f"缺少欄位: {', '.join(missing)}")
    unknown = sorted(set(record) - _RECORD_KEYS)
    if unknown:
        raise ManifestParseError(path, line_number, f"未知欄位: {', '.join(unknown)}")

    bag_id = record["bag_id"]
    if not isinstance(bag_id, str) or not bag_id:
        raise ManifestParseError(path, line_number, "bag_id 必須是非空字串")
    images = record["images"]
    if not isinstance(images, list) or not images or not all(isinstance(i, str) for i in images):
        raise ManifestParseError(path, line_number, "images 必須是非空的字串串列")
    try:
        split = Split(record["split"])
    except ValueError:
        raise ManifestParseError(path, line_number, f"未知的 split: {record['split']!r}")
    group = record.get("group")
    if group is not None and not isinstance(group, str):
        raise ManifestParseError(path, line_number, "group 必須是字串")

    refs = tuple(str(base_dir / image) if not Path(image).is_absolute() else image
                 for image in images)
    return Bag(bag_id=bag_id, image_refs=refs, label=_parse_label(record["label"], path, line_number),
               split=split, group=group)


def _validate_bags(bags: List[Bag], check_images: bool) -> TaskKind:
    """檢查 bag_id 唯一、跨切分不重複、標籤型態一致與影像存在"""
    seen: Dict[str, Split] = {}
    for bag in bags:
        if bag.bag_id in seen:
            previous = seen[bag.bag_id]
            if previous == bag.split:
                raise ManifestValidationError(bag.bag_id, "bag_id 重複")
            raise ManifestValidationError(
                bag.bag_id, f"同時出現在 {previous.value} 與 {bag.split.value}（切分重疊）")
        seen[bag.bag_id] = bag.split

    multilabel = isinstance(bags[0].label, tuple)
    width = len(bags[0].label) if multilabel else None
    for bag in bags:
        if isinstance(bag.label, tuple) != multilabel:
            raise ManifestValidationError(bag.bag_id, "清單混用單標籤與多標籤")
        if multilabel and len(bag.label) != width:
            raise ManifestValidationError(
                bag.bag_id, f"多標籤長度 {len(bag.label)} 與其他 bag 的 {width} 不一致")
        if check_images:
            for ref in bag.image_refs:
                if not Path(ref).is_file():
                    raise ManifestValidationError(bag.bag_id, f"找不到影像 {ref}")
    return TaskKind.MULTILABEL if multilabel else TaskKind.MULTICLASS


def load_manifest(path: Union[str, Path], check_images: bool = True) -> Manifest:
    """
    載入並驗證 JSON-Lines 清單

    Args:
        path: 清單路徑；影像路徑相對於清單所在目錄
        check_images: 是否確認每個影像檔存在

    Returns:
        Manifest: 驗證後的清單

    Raises:
        ManifestParseError: JSON 或欄位錯誤（帶行號）
        ManifestValidationError: 內容錯誤（帶 bag_id）
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"清單不存在: {path}")
    base_dir = path.parent
    bags: List[Bag] = []
    for line_number, record, _ in FileTools().iter_jsonl(path):
        if record is None:
            raise ManifestParseError(str(path), line_number, "JSON 解析失敗")
        bags.append(_parse_record(record, str(path), line_number, base_dir))
    if not bags:
        raise ValidationError(f"清單為空: {path}")

    task_kind = _validate_bags(bags, check_images)
    meta: Dict[str, Any] = {}
    meta_path = meta_path_for(path)
    if meta_path.exists():
        meta = read_json(meta_path)
        if not isinstance(meta, dict):
            raise ValidationError(f"{meta_path}: 中繼資料必須是 JSON 物件")
        if "task_kind" in meta and TaskKind(meta["task_kind"]) != task_kind:
            raise ValidationError(f"{meta_path}: task_kind 與標籤型態不符")

    class_names = _resolve_class_names(bags, task_kind, meta.get("class_names"))
    image_size = _resolve_image_size(bags, meta.get("image_size"))
    manifest = Manifest(bags=tuple(bags), class_names=class_names, task_kind=task_kind,
                        image_size=image_size, source_path=str(path))
    logger.info("載入清單 %s：%d 個 bag，%d 類（%s），切分 %s", path.name, len(bags),
                manifest.num_classes, task_kind.value, manifest.split_counts())
    return manifest


def _resolve_class_names(bags: List[Bag], task_kind: TaskKind,
                         declared: Optional[List[str]]) -> Tuple[str, ...]:
    if task_kind == TaskKind.MULTILABEL:
        inferred = len(bags[0].label)
    else:
        inferred = max(bag.label for bag in bags) + 1
    if declared is None:
        return tuple(f"class_{i}" for i in range(inferred))
    names = tuple(str(name) for name in declared)
    if task_kind == TaskKind.MULTILABEL and len(names) != inferred:
        raise ValidationError(f"class_names 數量 {len(names)} 與多標籤長度 {inferred} 不符")
    if len(names) < inferred:
        offender = next(bag for bag in bags if isinstance(bag.label, int) and bag.label >= len(names))
        raise ManifestValidationError(offender.bag_id, f"label {offender.label} 超出 {len(names)} 個類別")
    return names


def _resolve_image_size(bags: List[Bag], declared: Optional[Sequence[int]]) -> Tuple[int, int]:
    if declared is not None:
        if len(declared) != 2 or any(int(v) <= 0 for v in declared):
            raise ValidationError(f"image_size 必須是兩個正整數，收到 {declared}")
        return int(declared[0]), int(declared[1])
    from .images import decode_image_array
    first = decode_image_array(bags[0].image_refs[0])
    return int(first.shape[1]), int(first.shape[2])


# ---------------------------------------------------------------------------
# 標籤比例子集
# ---------------------------------------------------------------------------

def _selection_rank(seed: int, bag_id: str) -> int:
    digest = hashlib.blake2b(f"{seed}:{bag_id}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _keep_count(fraction: float, count: int) -> int:
    # 1e-9 容忍避免 0.3 × 10 這類浮點誤差多選一個
    return max(1, min(count, math.ceil(fraction * count - 1e-9)))


def plan_label_fraction(manifest: Manifest, fraction: float, seed: int) -> LabelFractionPlan:
    """
    建立分層且巢狀的標籤比例抽樣計畫

    每個類別（多標籤為標籤組合）依種子雜湊排序後取前 ⌈fraction·count⌉ 個，至少 1 個；
    同一種子下較小比例的選擇必為較大比例的子集。
    """
    if not 0 < fraction <= 1:
        raise ConfigError(f"fraction 必須在 (0, 1] 之間，收到 {fraction}")
    by_class: Dict[Any, List[Bag]] = {}
    for bag in manifest.split(Split.TRAIN):
        by_class.setdefault(bag.class_key, []).append(bag)

    selected = set()
    for members in by_class.values():
        ranked = sorted(members, key=lambda b: (_selection_rank(seed, b.bag_id), b.bag_id))
        selected.update(b.bag_id for b in ranked[:_keep_count(fraction, len(ranked))])
    ordered = tuple(b.bag_id for b in manifest.split(Split.TRAIN) if b.bag_id in selected)
    return LabelFractionPlan(fraction=float(fraction), seed=int(seed), selected_bag_ids=ordered)


def subset_by_fraction(manifest: Manifest, fraction: float, seed: int) -> Manifest:
    """
    只保留訓練切分中被抽中的 bag，驗證與測試切分不變

    Raises:
        ConfigError: fraction 不在 (0, 1]
    """
    plan = plan_label_fraction(manifest, fraction, seed)
    if fraction == 1.0:
        return manifest
    keep = set(plan.selected_bag_ids)
    bags = [bag for bag in manifest.bags if bag.split != Split.TRAIN or bag.bag_id in keep]
    logger.info("標籤比例 %.2f（seed=%d）：訓練 bag %d → %d", fraction, seed,
                len(manifest.split(Split.TRAIN)), len(keep))
    return manifest.with_bags(bags)


__all__ = [
    'TaskKind',
    'Split',
    'Bag',
    'Manifest',
    'LabelFractionPlan',
    'load_manifest',
    'meta_path_for',
    'plan_label_fraction',
    'subset_by_fraction',
]
