"""
訓練模組
階段設定、訓練紀錄與三階段訓練流程
"""

from .config import Stage, StageConfig, default_preset, resolve_stage
from .train_log import TrainLog, read_train_log
from .stages import (
    StageResult,
    checkpoint_path,
    finetune,
    finetune_network,
    pretrain_micle,
    pretrain_simclr,
    run_stage,
)

__all__ = [
    'Stage',
    'StageConfig',
    'default_preset',
    'resolve_stage',
    'TrainLog',
    'read_train_log',
    'StageResult',
    'checkpoint_path',
    'finetune',
    'finetune_network',
    'pretrain_micle',
    'pretrain_simclr',
    'run_stage',
]
