"""
多視角對齊程度：同一 bag 內不同影像的特徵 h 之平均餘弦距離
"""

import logging
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from corpus import Bag
from errors import ContractError
from models import Network
from models.predict import encode_images
from tools.batch_processor import BatchProcessor

logger = logging.getLogger(__name__)


def alignment_measure(network: Network, bags: Sequence[Bag], image_size,
                      processor: Optional[BatchProcessor] = None) -> float:
    """
    對每個 M ≥ 2 的 bag 計算所有影像對的平均 (1 − cos)，再對 bag 取平均；越小代表越對齊

    Raises:
        ContractError: 沒有任何 M ≥ 2 的 bag
    """
    multi = [bag for bag in bags if bag.M >= 2]
    if not multi:
        raise ContractError("alignment_measure 需要至少一個含兩張以上影像的 bag")
    refs = [ref for bag in multi for ref in bag.image_refs]
    features = encode_images(network, refs, image_size, processor=processor)
    norms = np.maximum(np.linalg.norm(features, axis=1, keepdims=True), 1e-12)
    unit = features / norms

    distances = []
    offset = 0
    for bag in multi:
        block = unit[offset:offset + bag.M]
        offset += bag.M
        pairs = [1.0 - float(block[a] @ block[b]) for a, b in combinations(range(bag.M), 2)]
        distances.append(float(np.mean(pairs)))
    value = float(np.mean(distances))
    logger.info("多視角對齊距離: %.4f（%d 個 bag）", value, len(multi))
    return value


__all__ = ['alignment_measure']
