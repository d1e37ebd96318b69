"""
最佳化器基底與動量 SGD
"""

import logging
from collections import OrderedDict
from typing import Dict, Optional

import numpy as np

from autodiff import Tensor
from errors import CheckpointError, ConfigError, NumericError

logger = logging.getLogger(__name__)


def check_gradient(name: str, grad: np.ndarray) -> None:
    """梯度含 NaN / Inf 時拋出並指名參數"""
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"參數 {name} 的梯度含 NaN/Inf")


def sgd_momentum_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray],
                      state: Dict[str, np.ndarray], lr_t: float, momentum: float = 0.9,
                      weight_decay: float = 0.0) -> None:
    """
    m ← momentum·m + (g + wd·w)；w ← w − lr_t·m

    Args:
        params: 名稱 → 參數（原地更新）
        grads: 名稱 → 梯度；缺少時視為 0
        state: 名稱 → 動量緩衝（原地更新）
    """
    for name, grad in grads.items():
        check_gradient(name, grad)
    for name, param in params.items():
        w = param.data
        grad = grads.get(name)
        grad = np.zeros_like(w) if grad is None else grad.astype(w.dtype, copy=False)
        effective = grad + weight_decay * w if weight_decay else grad
        buffer = state.get(name)
        buffer = effective.copy() if buffer is None else momentum * buffer + effective
        state[name] = buffer
        param.data = w - lr_t * buffer


class Optimizer:
    """持有參數與動量狀態的最佳化器基底"""

    state_prefix = "momentum/"

    def __init__(self, params: "OrderedDict[str, Tensor]"):
        self.params = OrderedDict(params)
        self.state: Dict[str, np.ndarray] = {}

    def gradients(self) -> Dict[str, np.ndarray]:
        return {name: p.grad.data for name, p in self.params.items() if p.grad is not None}

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()

    def step(self, lr_t: float) -> None:
        raise NotImplementedError

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((f"{self.state_prefix}{name}", self.state[name].copy())
                           for name in self.params if name in self.state)

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """
        Raises:
            CheckpointError: 狀態名稱不對應任何參數或形狀不符
        """
        loaded: Dict[str, np.ndarray] = {}
        for key, value in state.items():
            if not key.startswith(self.state_prefix):
                continue
            name = key[len(self.state_prefix):]
            if name not in self.params:
                raise CheckpointError(f"最佳化器狀態 {name} 不對應任何參數")
            if value.shape != self.params[name].shape:
                raise CheckpointError(f"最佳化器狀態 {name} 形狀 {value.shape} 不符")
            loaded[name] = value.astype(self.params[name].dtype).copy()
        self.state = loaded


class SGDMomentum(Optimizer):
    """動量 SGD（微調使用）"""

    def __init__(self, params: "OrderedDict[str, Tensor]", momentum: float = 0.9,
                 weight_decay: float = 0.0):
        super().__init__(params)
        if not 0 <= momentum < 1 or weight_decay < 0:
            raise ConfigError(f"momentum 需在 [0,1)、weight_decay 需 ≥ 0（{momentum}, {weight_decay}）")
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)

    def step(self, lr_t: float, grads: Optional[Dict[str, np.ndarray]] = None) -> None:
        sgd_momentum_step(self.params, self.gradients() if grads is None else grads, self.state,
                          lr_t, self.momentum, self.weight_decay)


__all__ = ['check_gradient', 'sgd_momentum_step', 'Optimizer', 'SGDMomentum']
