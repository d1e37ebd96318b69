"""
有限差分梯度檢查（float64）
"""

from typing import Callable, List, Optional, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """範數相對誤差 ‖a − n‖ / max(‖a‖, ‖n‖, 1e-12)"""
    diff = np.linalg.norm(np.ravel(analytic) - np.ravel(numeric))
    scale = max(np.linalg.norm(np.ravel(analytic)), np.linalg.norm(np.ravel(numeric)), 1e-12)
    return float(diff / scale)


def numeric_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor],
                      step: float = 1e-5) -> List[np.ndarray]:
    """
    中央差分梯度，步長 h = step·max(1, |θ|)

    Args:
        fn: 無參數函數，回傳純量張量（讀取 inputs 的當前值）
        inputs: 要擾動的張量（原地修改後復原）
        step: 相對步長
    """
    grads = []
    with no_grad():
        for tensor in inputs:
            grad = np.zeros_like(tensor.data, dtype=np.float64)
            flat = tensor.data.reshape(-1)
            for index in range(flat.size):
                original = flat[index]
                h = step * max(1.0, abs(float(original)))
                flat[index] = original + h
                upper = fn().item()
                flat[index] = original - h
                lower = fn().item()
                flat[index] = original
                grad.reshape(-1)[index] = (upper - lower) / (2.0 * h)
            grads.append(grad)
    return grads


def analytic_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor]) -> List[np.ndarray]:
    for tensor in inputs:
        tensor.zero_grad()
    fn().backward()
    return [
        tensor.grad.data.copy() if tensor.grad is not None else np.zeros_like(tensor.data)
        for tensor in inputs
    ]


def max_gradient_error(fn: Callable[[], Tensor], inputs: Sequence[Tensor],
                       step: float = 1e-5) -> float:
    """逐元素比較自動微分與中央差分，回傳各輸入中最大的相對誤差"""
    analytic = analytic_gradients(fn, inputs)
    numeric = numeric_gradients(fn, inputs, step)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


def directional_gradient_error(fn: Callable[[], Tensor], inputs: Sequence[Tensor],
                               rng: np.random.Generator, step: float = 1e-6,
                               consistency: float = 1e-6) -> Optional[float]:
    """
    沿隨機方向比較 ∇f·d 與 (f(θ+hd) − f(θ−hd)) / 2h

    ReLU / max-pool 的折點落在 [θ−hd, θ+hd] 之間時，h 與 h/2 的差分估計不一致，
    此時回傳 None 讓呼叫端改抽一組新設定。

    Returns:
        Optional[float]: 相對誤差，或 None（跨越折點）
    """
    analytic = analytic_gradients(fn, inputs)
    directions = [rng.standard_normal(t.shape) for t in inputs]
    norm = np.sqrt(sum(float((d * d).sum()) for d in directions))
    directions = [d / norm for d in directions]
    expected = sum(float((a * d).sum()) for a, d in zip(analytic, directions))
    originals = [t.data.copy() for t in inputs]

    def evaluate(offset: float) -> float:
        for tensor, original, direction in zip(inputs, originals, directions):
            tensor.data[...] = original + offset * direction
        with no_grad():
            return fn().item()

    try:
        coarse = (evaluate(step) - evaluate(-step)) / (2.0 * step)
        fine = (evaluate(step / 2) - evaluate(-step / 2)) / step
    finally:
        for tensor, original in zip(inputs, originals):
            tensor.data[...] = original
    grad_norm = np.sqrt(sum(float((a * a).sum()) for a in analytic))
    scale = max(grad_norm, 1e-12)
    if abs(coarse - fine) > consistency * max(scale, 1.0):
        return None
    return abs(expected - coarse) / scale


__all__ = [
    'relative_error',
    'numeric_gradients',
    'analytic_gradients',
    'max_gradient_error',
    'directional_gradient_error',
]
