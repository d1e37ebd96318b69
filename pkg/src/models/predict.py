"""
推論：影像特徵與 bag 層級機率（多張影像取機率平均）
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from augment import preset_build
from autodiff import Tensor, no_grad
from corpus import Bag, decode_image
from errors import ContractError
from tools.batch_processor import BatchProcessor, parallel_map
from .heads import Network

logger = logging.getLogger(__name__)


def _network_dtype(network: Network):
    return next(iter(network.encoder.parameters().values())).dtype


def _preprocess(refs: Sequence[str], image_size: Tuple[int, int],
                processor: Optional[BatchProcessor]) -> list:
    pipeline = preset_build("eval", image_size)
    return parallel_map(lambda ref: pipeline.apply_array(decode_image(ref).data, 0), list(refs),
                        processor)


def encode_images(network: Network, refs: Sequence[str], image_size: Tuple[int, int],
                  batch_size: int = 64, processor: Optional[BatchProcessor] = None) -> np.ndarray:
    """以評估預設（只縮放）前處理後取得特徵 h，回傳 len(refs)×D（float64）"""
    arrays = _preprocess(refs, image_size, processor)
    dtype = _network_dtype(network)
    features = []
    with no_grad():
        for start in range(0, len(arrays), batch_size):
            batch = Tensor(np.stack(arrays[start:start + batch_size]), dtype=dtype)
            features.append(network.features(batch).data.astype(np.float64))
    return np.concatenate(features, axis=0)


def image_probabilities(network: Network, refs: Sequence[str], image_size: Tuple[int, int],
                        batch_size: int = 64,
                        processor: Optional[BatchProcessor] = None) -> np.ndarray:
    """逐張影像的類別機率，len(refs)×K"""
    if network.classifier is None:
        raise ContractError("推論需要帶分類頭的網路（finetune 檢查點）")
    arrays = _preprocess(refs, image_size, processor)
    dtype = _network_dtype(network)
    probabilities = []
    for start in range(0, len(arrays), batch_size):
        batch = Tensor(np.stack(arrays[start:start + batch_size]), dtype=dtype)
        probabilities.append(network.predict_proba(batch).astype(np.float64))
    return np.concatenate(probabilities, axis=0)


def predict_bag_scores(network: Network, bags: Sequence[Bag], image_size: Tuple[int, int],
                       batch_size: int = 64,
                       processor: Optional[BatchProcessor] = None) -> np.ndarray:
    """
    bag 層級分數：bag 內各影像機率向量的平均

    Returns:
        np.ndarray: len(bags)×K
    """
    refs = [ref for bag in bags for ref in bag.image_refs]
    if not refs:
        raise ContractError("沒有可推論的影像")
    per_image = image_probabilities(network, refs, image_size, batch_size, processor)
    scores = []
    offset = 0
    for bag in bags:
        scores.append(per_image[offset:offset + bag.M].mean(axis=0))
        offset += bag.M
    return np.stack(scores)


__all__ = ['encode_images', 'image_probabilities', 'predict_bag_scores']
