"""
LARS（逐層自適應學習率）最佳化器
"""

import fnmatch
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from autodiff import Tensor
from errors import ConfigError
from .sgd import Optimizer, check_gradient

logger = logging.getLogger(__name__)


@dataclass
class LarsConfig:
    """
    Args:
        base_lr: 基礎學習率（乘上排程倍率後為 lr_t）
        momentum: 動量
        weight_decay: 權重衰減（併入 g' = g + wd·w）
        trust_coefficient: η
        exclude_from_adaptation: 名稱樣式（fnmatch），符合者信任比固定為 1
    """
    base_lr: float = 0.3
    momentum: float = 0.9
    weight_decay: float = 1e-6
    trust_coefficient: float = 1e-3
    exclude_from_adaptation: Tuple[str, ...] = field(default_factory=lambda: ("*.bias",))

    def __post_init__(self):
        self.exclude_from_adaptation = tuple(self.exclude_from_adaptation)
        if self.base_lr < 0 or self.weight_decay < 0 or self.trust_coefficient <= 0:
            raise ConfigError("LARS: base_lr、weight_decay 需 ≥ 0，trust_coefficient 需 > 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"LARS: momentum 需在 [0,1)，收到 {self.momentum}")

    def excluded(self, name: str) -> bool:
        return any(fnmatch.fnmatchcase(name, pattern) for pattern in self.exclude_from_adaptation)


def trust_ratio(weight: np.ndarray, update: np.ndarray, trust_coefficient: float) -> float:
    """r = η‖w‖ / ‖g'‖；任一範數為 0 時 r = 1"""
    weight_norm = float(np.linalg.norm(weight))
    update_norm = float(np.linalg.norm(update))
    if weight_norm > 0 and update_norm > 0:
        return trust_coefficient * weight_norm / update_norm
    return 1.0


def lars_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray],
              state: Dict[str, np.ndarray], cfg: LarsConfig, lr_t: float) -> Dict[str, float]:
    """
    逐參數張量：g' = g + wd·w；m ← momentum·m + lr_t·r·g'；w ← w − m

    lr_t 併入動量緩衝，因此 r = 1 時只在 lr_t 固定下與 sgd_momentum_step 一致

    Returns:
        Dict[str, float]: 各參數使用的信任比

    Raises:
        NumericError: 梯度含 NaN，訊息指名參數
    """
    for name, grad in grads.items():
        check_gradient(name, grad)
    ratios: Dict[str, float] = {}
    for name, param in params.items():
        w = param.data
        grad = grads.get(name)
        grad = np.zeros_like(w) if grad is None else grad.astype(w.dtype, copy=False)
        effective = grad + cfg.weight_decay * w if cfg.weight_decay else grad
        ratio = 1.0 if cfg.excluded(name) else trust_ratio(w, effective, cfg.trust_coefficient)
        scaled = (lr_t * ratio) * effective
        buffer = state.get(name)
        buffer = scaled if buffer is None else cfg.momentum * buffer + scaled
        state[name] = buffer
        param.data = w - buffer
        ratios[name] = ratio
    return ratios


class LARS(Optimizer):
    """LARS 最佳化器（預訓練使用）"""

    def __init__(self, params: "OrderedDict[str, Tensor]", cfg: LarsConfig):
        super().__init__(params)
        self.cfg = cfg
        self.last_ratios: Dict[str, float] = {}

    def step(self, lr_t: float, grads: Optional[Dict[str, np.ndarray]] = None) -> None:
        self.last_ratios = lars_step(self.params, self.gradients() if grads is None else grads,
                                     self.state, self.cfg, lr_t)


__all__ = ['LarsConfig', 'trust_ratio', 'lars_step', 'LARS']
