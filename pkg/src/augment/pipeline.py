"""
資料增強流程與預設組合
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from autodiff import Tensor
from errors import ConfigError
from .transforms import (
    TRANSFORMS,
    BrightnessAdditive,
    ColorJitter,
    ContrastMultiplicative,
    GaussianBlur,
    HorizontalFlip,
    Params,
    RandomGrayscale,
    RandomResizedCrop,
    Resize,
    Rotate,
    Transform,
    VerticalFlip,
    resize_bilinear,
)

logger = logging.getLogger(__name__)

PRESETS = ("derm_pretrain", "xray_pretrain", "micle_partial", "finetune", "xray_finetune", "eval")

SEED_MASK = (1 << 64) - 1


def derive_sample_seed(global_seed: int, epoch: int, bag_id: str, view_index: int,
                       stage_tag: str) -> int:
    """
    逐樣本種子 = hash(global_seed, epoch, bag_id, view_index, stage_tag)

    與工作執行緒數量、批次順序無關。
    """
    text = f"{int(global_seed)}|{int(epoch)}|{bag_id}|{int(view_index)}|{stage_tag}"
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & SEED_MASK


@dataclass(frozen=True)
class AugmentPipeline:
    """有序的轉換序列；輸出形狀固定為 C×output_size，值域 [0,1]"""
    preset: str
    ops: Tuple[Transform, ...]
    output_size: Tuple[int, int]

    @property
    def op_names(self) -> List[str]:
        return [op.name for op in self.ops]

    def apply_with_params(self, image: np.ndarray,
                          sample_seed: int) -> Tuple[np.ndarray, List[Tuple[str, Params]]]:
        """
        套用流程並回傳抽到的參數

        Args:
            image: C×H×W，值域 [0,1]
            sample_seed: 逐樣本種子（唯一的隨機來源）
        """
        rng = np.random.default_rng(int(sample_seed) & SEED_MASK)
        out = np.asarray(image, dtype=np.float64)
        drawn: List[Tuple[str, Params]] = []
        for op in self.ops:
            params = op.sample(rng, out.shape)
            out = op.apply(out, params)
            drawn.append((op.name, params))
        if out.shape[1:] != tuple(self.output_size):
            out = resize_bilinear(out, tuple(self.output_size))
        out = np.nan_to_num(out, nan=0.0)
        return np.clip(out, 0.0, 1.0), drawn

    def apply_array(self, image: np.ndarray, sample_seed: int) -> np.ndarray:
        return self.apply_with_params(image, sample_seed)[0]

    def apply(self, image: Union[Tensor, np.ndarray], sample_seed: int, dtype=None) -> Tensor:
        """套用流程，回傳張量"""
        array = image.data if isinstance(image, Tensor) else image
        return Tensor(self.apply_array(array, sample_seed), dtype=dtype)

    def sample_params(self, sample_seed: int, image_shape: Tuple[int, int, int]) -> Tuple:
        """抽出完整參數向量（攤平成可比較的 tuple）"""
        _, drawn = self.apply_with_params(np.zeros(image_shape), sample_seed)
        return tuple((name, tuple(sorted(params.items()))) for name, params in drawn)

    def describe(self) -> List[Dict[str, Any]]:
        """設定紀錄用的轉換清單"""
        described = []
        for op in self.ops:
            entry: Dict[str, Any] = {"op": op.name}
            entry.update({k: list(v) if isinstance(v, tuple) else v for k, v in vars(op).items()})
            described.append(entry)
        return described


def _preset_ops(name: str, size: Tuple[int, int]) -> List[Transform]:
    crop = RandomResizedCrop(output_size=size)
    if name == "derm_pretrain":
        return [crop, HorizontalFlip(), VerticalFlip(), ColorJitter(strength=1.0), RandomGrayscale(),
                GaussianBlur()]
    if name == "xray_pretrain":
        return [crop, HorizontalFlip(), Rotate(max_degrees=45.0), ColorJitter(strength=0.5)]
    if name == "micle_partial":
        return [crop]
    if name == "finetune":
        return [crop, HorizontalFlip(), VerticalFlip(), Rotate(max_degrees=20.0),
                ColorJitter(strength=0.5), GaussianBlur()]
    if name == "xray_finetune":
        return [Rotate(max_degrees=20.0), crop, HorizontalFlip(), BrightnessAdditive(),
                ContrastMultiplicative()]
    if name == "eval":
        return [Resize(output_size=size)]
    raise ConfigError(f"未知的增強預設: {name}（可用: {', '.join(PRESETS)}）")


def preset_build(name: str, output_size: Tuple[int, int] = (32, 32),
                 overrides: Optional[Dict[str, Dict[str, Any]]] = None) -> AugmentPipeline:
    """
    依名稱建立預設流程

    Args:
        name: 預設名稱
        output_size: 輸出 (H, W)
        overrides: {轉換名稱: {參數: 值}}，只能覆寫該預設已包含的轉換

    Raises:
        ConfigError: 未知預設、未知轉換或參數
    """
    size = (int(output_size[0]), int(output_size[1]))
    ops = _preset_ops(name, size)
    for op_name, values in (overrides or {}).items():
        if op_name not in TRANSFORMS:
            raise ConfigError(f"未知的轉換: {op_name}")
        matches = [i for i, op in enumerate(ops) if op.name == op_name]
        if not matches:
            raise ConfigError(f"預設 {name} 不包含轉換 {op_name}")
        for index in matches:
            ops[index] = ops[index].with_overrides(dict(values))
    return AugmentPipeline(preset=name, ops=tuple(ops), output_size=size)


__all__ = ['PRESETS', 'AugmentPipeline', 'derive_sample_seed', 'preset_build']
