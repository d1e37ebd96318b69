"""
最佳化模組
LARS、動量 SGD、學習率排程與超參數網格
"""

from .sgd import Optimizer, SGDMomentum, sgd_momentum_step
from .lars import LARS, LarsConfig, lars_step, trust_ratio
from .schedule import Schedule, ScheduleKind, schedule_lr
from .sweep import SweepGrid, build_sweep, write_sweep_configs

__all__ = [
    'Optimizer',
    'SGDMomentum',
    'sgd_momentum_step',
    'LARS',
    'LarsConfig',
    'lars_step',
    'trust_ratio',
    'Schedule',
    'ScheduleKind',
    'schedule_lr',
    'SweepGrid',
    'build_sweep',
    'write_sweep_configs',
]
