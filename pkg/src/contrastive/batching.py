"""
對比學習批次建構

位置 (2k, 2k+1)（0 起算）為第 k 組正樣本對。
SimCLR：同一張影像的兩次增強；MICLe：同一 bag 中兩張不同影像各增強一次。
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import Generic, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from augment import AugmentPipeline, derive_sample_seed
from autodiff import Tensor
from corpus import Bag, decode_image
from errors import ContractError, EndOfEpoch
from tools.batch_processor import BatchProcessor, parallel_map

logger = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass(frozen=True)
class ImageItem:
    """SimCLR 的取樣單位：bag 中的一張影像"""
    bag_id: str
    image_index: int
    ref: str


@dataclass(frozen=True)
class ViewProvenance:
    bag_id: str
    image_index: int
    sample_seed: int


@dataclass
class PairBatch:
    """2N 個視角與每個視角的來源"""
    views: Tensor
    provenance: List[ViewProvenance]

    @property
    def num_pairs(self) -> int:
        return len(self.provenance) // 2

    def pair(self, k: int) -> Tuple[ViewProvenance, ViewProvenance]:
        return self.provenance[2 * k], self.provenance[2 * k + 1]


def image_items(bags: Sequence[Bag]) -> List[ImageItem]:
    """展開 bag 為逐張影像的取樣單位"""
    return [ImageItem(bag.bag_id, index, ref)
            for bag in bags for index, ref in enumerate(bag.image_refs)]


def epoch_seed(global_seed: int, epoch: int, stage_tag: str) -> int:
    """每個 epoch 的洗牌種子 = hash(global_seed, epoch)"""
    text = f"{int(global_seed)}|{int(epoch)}|{stage_tag}|shuffle"
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


class EpochSampler(Generic[T]):
    """
    不放回取樣：每個 epoch 重新洗牌，剩餘不足一個批次時丟棄並發出 EndOfEpoch
    """

    def __init__(self, units: Sequence[T], batch_size: int, global_seed: int,
                 stage_tag: str, epoch: int = 0):
        if batch_size < 2:
            raise ContractError(f"批次大小必須 ≥ 2，收到 {batch_size}")
        if len(units) < batch_size:
            raise ContractError(f"取樣單位數 {len(units)} 少於批次大小 {batch_size}")
        self.units = list(units)
        self.batch_size = int(batch_size)
        self.global_seed = int(global_seed)
        self.stage_tag = stage_tag
        self.epoch = int(epoch)
        self.cursor = 0
        self._order = self._shuffle(self.epoch)

    def _shuffle(self, epoch: int) -> np.ndarray:
        rng = np.random.default_rng(epoch_seed(self.global_seed, epoch, self.stage_tag))
        return rng.permutation(len(self.units))

    def take(self) -> List[T]:
        """
        取出下一個批次

        Raises:
            EndOfEpoch: 本 epoch 剩餘單位不足一個批次
        """
        if self.cursor + self.batch_size > len(self.units):
            raise EndOfEpoch(f"epoch {self.epoch} 結束")
        indices = self._order[self.cursor:self.cursor + self.batch_size]
        self.cursor += self.batch_size
        return [self.units[i] for i in indices]

    def start_epoch(self, epoch: Optional[int] = None) -> None:
        self.epoch = self.epoch + 1 if epoch is None else int(epoch)
        self.cursor = 0
        self._order = self._shuffle(self.epoch)

    def next_batch(self) -> Tuple[int, List[T]]:
        """取出批次，必要時自動進入下一個 epoch；回傳 (epoch, 單位)"""
        try:
            return self.epoch, self.take()
        except EndOfEpoch:
            self.start_epoch()
            return self.epoch, self.take()

    def state(self) -> dict:
        return {"epoch": self.epoch, "cursor": self.cursor, "stage_tag": self.stage_tag,
                "global_seed": self.global_seed}


def _render(task: Tuple[str, int, AugmentPipeline]) -> np.ndarray:
    ref, seed, pipeline = task
    return pipeline.apply_array(decode_image(ref).data, seed)


def _stack_views(tasks: List[Tuple[str, int, AugmentPipeline]],
                 processor: Optional[BatchProcessor], dtype) -> Tensor:
    arrays = parallel_map(_render, tasks, processor)
    return Tensor(np.stack(arrays), dtype=dtype)


def build_batch_simclr(items: Sequence[ImageItem], pipeline: AugmentPipeline, epoch: int,
                       global_seed: int, stage_tag: str = "simclr",
                       processor: Optional[BatchProcessor] = None, dtype=None) -> PairBatch:
    """
    每張影像增強兩次，放在 (2k, 2k+1)

    view_index = 2·image_index + v，同一 bag 的不同影像不會共用種子。
    """
    if len(items) < 2:
        raise ContractError(f"SimCLR 批次至少需要 2 個影像，收到 {len(items)}")
    tasks, provenance = [], []
    for item in items:
        for v in range(2):
            seed = derive_sample_seed(global_seed, epoch, item.bag_id, 2 * item.image_index + v,
                                      stage_tag)
            tasks.append((item.ref, seed, pipeline))
            provenance.append(ViewProvenance(item.bag_id, item.image_index, seed))
    return PairBatch(views=_stack_views(tasks, processor, dtype), provenance=provenance)


def micle_pair_indices(bag: Bag, epoch: int, global_seed: int,
                       stage_tag: str = "micle") -> Tuple[int, int]:
    """
    從 bag 中均勻抽出兩張不同影像（無序對均勻）；M = 1 時兩個位置都是唯一的影像
    """
    if bag.M == 1:
        return 0, 0
    seed = derive_sample_seed(global_seed, epoch, bag.bag_id, -1, f"{stage_tag}:select")
    first, second = np.random.default_rng(seed).choice(bag.M, size=2, replace=False)
    return int(first), int(second)


def build_batch_micle(bags: Sequence[Bag], pipeline: AugmentPipeline, epoch: int,
                      global_seed: int, stage_tag: str = "micle",
                      processor: Optional[BatchProcessor] = None, dtype=None) -> PairBatch:
    """每個 bag 取兩張不同影像（M=1 時同一張影像增強兩次）"""
    if len(bags) < 2:
        raise ContractError(f"MICLe 批次至少需要 2 個 bag，收到 {len(bags)}")
    tasks, provenance = [], []
    for bag in bags:
        for v, index in enumerate(micle_pair_indices(bag, epoch, global_seed, stage_tag)):
            seed = derive_sample_seed(global_seed, epoch, bag.bag_id, v, stage_tag)
            tasks.append((bag.image_refs[index], seed, pipeline))
            provenance.append(ViewProvenance(bag.bag_id, index, seed))
    return PairBatch(views=_stack_views(tasks, processor, dtype), provenance=provenance)


__all__ = [
    'ImageItem',
    'ViewProvenance',
    'PairBatch',
    'EpochSampler',
    'image_items',
    'epoch_seed',
    'build_batch_simclr',
    'micle_pair_indices',
    'build_batch_micle',
]
