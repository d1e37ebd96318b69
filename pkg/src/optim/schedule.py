"""
學習率排程：線性暖身 + 餘弦衰減，或固定值
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from errors import ConfigError, ContractError

DEFAULT_WARMUP_FRACTION = 0.05


class ScheduleKind(Enum):
    WARMUP_COSINE = "warmup_cosine"
    CONSTANT = "constant"


@dataclass
class Schedule:
    """
    Args:
        total_steps: 總步數
        warmup_steps: 暖身步數（未提供時為總步數的 5%）
        kind: 排程種類
    """
    total_steps: int
    warmup_steps: Optional[int] = None
    kind: ScheduleKind = ScheduleKind.WARMUP_COSINE

    def __post_init__(self):
        if isinstance(self.kind, str):
            try:
                self.kind = ScheduleKind(self.kind)
            except ValueError:
                raise ConfigError(f"未知的排程: {self.kind}")
        if self.total_steps < 0:
            raise ConfigError(f"total_steps 不可為負: {self.total_steps}")
        if self.warmup_steps is None:
            self.warmup_steps = int(round(DEFAULT_WARMUP_FRACTION * self.total_steps))
        if self.warmup_steps < 0 or (self.total_steps > 0 and self.warmup_steps >= self.total_steps):
            raise ConfigError(
                f"warmup_steps 必須在 [0, total_steps) 之間（{self.warmup_steps} / {self.total_steps}）")


def schedule_lr(schedule: Schedule, step: int) -> float:
    """
    學習率倍率

    暖身期間由 0 線性升至 1；之後以餘弦由 1 降到 total_steps 時的 0。

    Raises:
        ContractError: step 不在 [0, total_steps]
    """
    if not 0 <= step <= schedule.total_steps:
        raise ContractError(f"step {step} 超出 [0, {schedule.total_steps}]")
    if schedule.kind == ScheduleKind.CONSTANT:
        return 1.0
    warmup = schedule.warmup_steps
    if step < warmup:
        return step / warmup
    span = schedule.total_steps - warmup
    if span <= 0:
        return 1.0
    progress = (step - warmup) / span
    return 0.5 * (1.0 + math.cos(math.pi * progress))


__all__ = ['DEFAULT_WARMUP_FRACTION', 'ScheduleKind', 'Schedule', 'schedule_lr']
