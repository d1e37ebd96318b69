"""
資料增強模組
逐樣本種子驅動的隨機影像轉換與預設流程
"""

from .transforms import (
    Transform,
    RandomResizedCrop,
    Resize,
    HorizontalFlip,
    VerticalFlip,
    Rotate,
    ColorJitter,
    RandomGrayscale,
    BrightnessAdditive,
    ContrastMultiplicative,
    GaussianBlur,
    resize_bilinear,
)
from .pipeline import PRESETS, AugmentPipeline, derive_sample_seed, preset_build

__all__ = [
    'Transform',
    'RandomResizedCrop',
    'Resize',
    'HorizontalFlip',
    'VerticalFlip',
    'Rotate',
    'ColorJitter',
    'RandomGrayscale',
    'BrightnessAdditive',
    'ContrastMultiplicative',
    'GaussianBlur',
    'resize_bilinear',
    'PRESETS',
    'AugmentPipeline',
    'derive_sample_seed',
    'preset_build',
]
