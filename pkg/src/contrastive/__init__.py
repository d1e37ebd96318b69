"""
對比學習模組
SimCLR / MICLe 批次建構、NT-Xent 損失與多視角對齊量測
"""

from .batching import (
    ImageItem,
    ViewProvenance,
    PairBatch,
    EpochSampler,
    image_items,
    build_batch_simclr,
    build_batch_micle,
    micle_pair_indices,
)
from .loss import NTXentConfig, nt_xent_loss, nt_xent_oracle, nt_xent_oracle_terms, partner_indices
from .alignment import alignment_measure

__all__ = [
    'ImageItem',
    'ViewProvenance',
    'PairBatch',
    'EpochSampler',
    'image_items',
    'build_batch_simclr',
    'build_batch_micle',
    'micle_pair_indices',
    'NTXentConfig',
    'nt_xent_loss',
    'nt_xent_oracle',
    'nt_xent_oracle_terms',
    'partner_indices',
    'alignment_measure',
]
