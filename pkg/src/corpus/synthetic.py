"""
合成多視角資料集產生器

每個類別有一個潛在樣板（條紋背景與數個有位置、顏色的形狀），
每個 bag 在樣板上加入病例層級的變化，再以不同視角、光照與雜訊渲染 M 次。
"""

import hashlib
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from errors import ConfigError
from tools.file_tools import write_json
from .images import write_image
from .manifest import Bag, Manifest, Split, TaskKind, load_manifest

logger = logging.getLogger(__name__)

SHAPE_KINDS = ("disk", "square", "ring", "cross")


@dataclass
class SyntheticCorpusSpec:
    """合成資料集規格"""
    num_classes: int = 8
    bags_per_class: int = 50
    views_per_bag_range: Tuple[int, int] = (2, 4)
    image_size: Tuple[int, int] = (32, 32)
    seed: int = 0
    out_dir: str = "corpus"
    task_kind: str = "multiclass"
    shapes_per_class: int = 2
    viewpoint_shift: float = 0.12
    noise_std: float = 0.08

    def __post_init__(self):
        self.views_per_bag_range = tuple(int(v) for v in self.views_per_bag_range)
        self.image_size = tuple(int(v) for v in self.image_size)
        low, high = self.views_per_bag_range
        if self.num_classes < 2 or self.bags_per_class < 1:
            raise ConfigError("num_classes 需 ≥ 2 且 bags_per_class 需 ≥ 1")
        if low < 1 or high < low:
            raise ConfigError(f"views_per_bag_range 不合法: {self.views_per_bag_range}")
        if min(self.image_size) < 8:
            raise ConfigError(f"image_size 過小: {self.image_size}")
        if self.task_kind not in (TaskKind.MULTICLASS.value, TaskKind.MULTILABEL.value):
            raise ConfigError(f"未知的 task_kind: {self.task_kind}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SyntheticCorpusSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"合成資料規格含未知欄位: {', '.join(unknown)}")
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["views_per_bag_range"] = list(self.views_per_bag_range)
        data["image_size"] = list(self.image_size)
        return data


@dataclass(frozen=True)
class ShapeTemplate:
    kind: str
    center: Tuple[float, float]
    radius: float
    color: Tuple[float, float, float]


@dataclass(frozen=True)
class ClassTemplate:
    """類別樣板：條紋方向與頻率、底色，以及形狀配置"""
    stripe_angle: float
    stripe_frequency: float
    base_color: Tuple[float, float, float]
    shapes: Tuple[ShapeTemplate, ...]


def _rng(seed: int, *tags: Union[str, int]) -> np.random.Generator:
    text = ":".join(str(t) for t in (seed,) + tags)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def build_class_templates(spec: SyntheticCorpusSpec) -> List[ClassTemplate]:
    """依種子產生各類別樣板"""
    templates = []
    for c in range(spec.num_classes):
        rng = _rng(spec.seed, "class", c)
        shapes = tuple(
            ShapeTemplate(
                kind=SHAPE_KINDS[int(rng.integers(len(SHAPE_KINDS)))],
                center=(float(rng.uniform(0.25, 0.75)), float(rng.uniform(0.25, 0.75))),
                radius=float(rng.uniform(0.08, 0.16)),
                color=tuple(float(v) for v in rng.uniform(0.1, 0.95, size=3)),
            )
            for _ in range(spec.shapes_per_class)
        )
        templates.append(ClassTemplate(
            stripe_angle=float(np.pi * c / spec.num_classes + rng.uniform(-0.1, 0.1)),
            stripe_frequency=float(rng.uniform(2.0, 5.0)),
            base_color=tuple(float(v) for v in rng.uniform(0.2, 0.8, size=3)),
            shapes=shapes,
        ))
    return templates


def _shape_mask(kind: str, dx: np.ndarray, dy: np.ndarray, radius: float) -> np.ndarray:
    if kind == "disk":
        return dx ** 2 + dy ** 2 <= radius ** 2
    if kind == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) <= radius
    if kind == "ring":
        distance = np.sqrt(dx ** 2 + dy ** 2)
        return (distance <= radius) & (distance >= 0.55 * radius)
    width = 0.35 * radius
    return ((np.abs(dx) <= width) & (np.abs(dy) <= radius)) | \
        ((np.abs(dy) <= width) & (np.abs(dx) <= radius))


def render_view(shapes: List[ShapeTemplate], stripe: Tuple[float, float],
                base_color: np.ndarray, size: Tuple[int, int], offset: Tuple[float, float],
                lighting: float, noise: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """
    渲染一個視角

    Args:
        shapes: 要繪製的形狀
        stripe: (方向, 頻率)
        base_color: 背景底色（長度 3）
        size: (H, W)
        offset: 視角平移（比例座標）
        lighting: 整體光照倍率
        noise: 與輸出同形狀的加性雜訊
        scale: 形狀大小倍率

    Returns:
        np.ndarray: 3×H×W，值域 [0,1]
    """
    height, width = size
    ys, xs = np.meshgrid((np.arange(height) + 0.5) / height, (np.arange(width) + 0.5) / width,
                         indexing="ij")
    xs = xs - offset[0]
    ys = ys - offset[1]
    angle, frequency = stripe
    wave = 0.5 + 0.5 * np.sin(2 * np.pi * frequency * (xs * np.cos(angle) + ys * np.sin(angle)))
    image = base_color[:, None, None] * (0.55 + 0.45 * wave)[None]
    for shape in shapes:
        mask = _shape_mask(shape.kind, xs - shape.center[0], ys - shape.center[1],
                           shape.radius * scale)
        image = np.where(mask[None], np.asarray(shape.color)[:, None, None], image)
    return np.clip(image * lighting + noise, 0.0, 1.0)


def _bag_label(spec: SyntheticCorpusSpec, c: int, rng: np.random.Generator) -> Union[int, Tuple[int, ...]]:
    if spec.task_kind == TaskKind.MULTICLASS.value:
        return c
    bits = (rng.random(spec.num_classes) < 0.3).astype(int)
    bits[c] = 1
    return tuple(int(b) for b in bits)


def _split_for(index: int, count: int) -> Split:
    """每類依序：前 60% 訓練、20% 驗證、20% 測試（驗證與測試向下取整）"""
    n_val = count // 5
    n_test = count // 5
    n_train = count - n_val - n_test
    if index < n_train:
        return Split.TRAIN
    if index < n_train + n_val:
        return Split.VALIDATION
    return Split.TEST


def generate_synthetic_corpus(spec: SyntheticCorpusSpec, out_dir: Optional[Union[str, Path]] = None) -> Manifest:
    """
    產生合成多視角資料集（PPM 影像 + JSONL 清單 + sidecar 中繼資料）

    同一規格與種子必定產生位元組完全相同的檔案。

    Args:
        spec: 資料集規格
        out_dir: 輸出目錄（覆寫 spec.out_dir）

    Returns:
        Manifest: 寫出後重新載入的清單
    """
    root = Path(out_dir if out_dir is not None else spec.out_dir)
    templates = build_class_templates(spec)
    low, high = spec.views_per_bag_range
    height, width = spec.image_size

    bags: List[Bag] = []
    for c, template in enumerate(templates):
        for b in range(spec.bags_per_class):
            rng = _rng(spec.seed, "bag", c, b)
            bag_id = f"c{c:02d}_b{b:04d}"
            label = _bag_label(spec, c, rng)
            shapes = list(template.shapes)
            if isinstance(label, tuple):
                for other in range(spec.num_classes):
                    if other != c and label[other]:
                        shapes.append(templates[other].shapes[0])
            # 病例層級：底色偏移、干擾形狀、形狀大小
            base_color = np.clip(np.asarray(template.base_color) + rng.normal(0, 0.12, 3), 0.05, 0.95)
            shapes.append(ShapeTemplate(
                kind=SHAPE_KINDS[int(rng.integers(len(SHAPE_KINDS)))],
                center=(float(rng.uniform(0.1, 0.9)), float(rng.uniform(0.1, 0.9))),
                radius=float(rng.uniform(0.05, 0.12)),
                color=tuple(float(v) for v in rng.uniform(0.0, 1.0, 3)),
            ))
            case_offset = rng.uniform(-0.1, 0.1, 2)
            scale = float(rng.uniform(0.85, 1.15))
            group = "site_a" if rng.random() < 0.5 else "site_b"

            refs = []
            for v in range(int(rng.integers(low, high + 1))):
                offset = case_offset + rng.uniform(-spec.viewpoint_shift, spec.viewpoint_shift, 2)
                image = render_view(
                    shapes, (template.stripe_angle, template.stripe_frequency), base_color,
                    (height, width), (float(offset[0]), float(offset[1])),
                    lighting=float(rng.uniform(0.7, 1.3)),
                    noise=rng.normal(0.0, spec.noise_std, (3, height, width)),
                    scale=scale,
                )
                relative = f"images/{bag_id}_v{v}.ppm"
                write_image(root / relative, image)
                refs.append(str(root / relative))
            bags.append(Bag(bag_id=bag_id, image_refs=tuple(refs), label=label,
                            split=_split_for(b, spec.bags_per_class), group=group))

    manifest = Manifest(
        bags=tuple(bags),
        class_names=tuple(f"class_{c}" for c in range(spec.num_classes)),
        task_kind=TaskKind(spec.task_kind),
        image_size=(height, width),
    )
    manifest_path = root / "manifest.jsonl"
    manifest.save(manifest_path)
    write_json(root / "corpus_spec.json", spec.to_dict())
    logger.info("合成資料集完成：%d 類 × %d bag，輸出至 %s", spec.num_classes,
                spec.bags_per_class, root)
    return load_manifest(manifest_path)


def nearest_centroid_accuracy(manifest: Manifest) -> float:
    """
    原始像素最近質心分類的測試準確率（單標籤），用來確認資料集不至於過於簡單
    """
    from .images import decode_image_array

    def bag_vector(bag: Bag) -> np.ndarray:
        return np.mean([decode_image_array(ref).ravel() for ref in bag.image_refs], axis=0)

    train = manifest.split(Split.TRAIN)
    test = manifest.split(Split.TEST)
    if manifest.task_kind != TaskKind.MULTICLASS or not train or not test:
        raise ConfigError("最近質心基準只適用於含訓練與測試切分的單標籤清單")
    vectors = np.stack([bag_vector(bag) for bag in train])
    labels = np.asarray([bag.label for bag in train])
    classes = np.unique(labels)
    centroids = np.stack([vectors[labels == c].mean(axis=0) for c in classes])
    correct = 0
    for bag in test:
        distances = ((centroids - bag_vector(bag)) ** 2).sum(axis=1)
        correct += int(classes[int(np.argmin(distances))] == bag.label)
    return correct / len(test)


__all__ = [
    'SyntheticCorpusSpec',
    'ClassTemplate',
    'ShapeTemplate',
    'build_class_templates',
    'render_view',
    'generate_synthetic_corpus',
    'nearest_centroid_accuracy',
]
