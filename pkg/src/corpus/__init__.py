"""
資料模組
清單載入、影像解碼、標籤比例子集與合成資料集
"""

from .images import decode_image, decode_image_array, encode_pnm, write_image
from .manifest import (
    TaskKind,
    Split,
    Bag,
    Manifest,
    LabelFractionPlan,
    load_manifest,
    plan_label_fraction,
    subset_by_fraction,
)
from .synthetic import SyntheticCorpusSpec, generate_synthetic_corpus, nearest_centroid_accuracy

__all__ = [
    'decode_image',
    'decode_image_array',
    'encode_pnm',
    'write_image',
    'TaskKind',
    'Split',
    'Bag',
    'Manifest',
    'LabelFractionPlan',
    'load_manifest',
    'plan_label_fraction',
    'subset_by_fraction',
    'SyntheticCorpusSpec',
    'generate_synthetic_corpus',
    'nearest_centroid_accuracy',
]
