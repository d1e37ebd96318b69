"""
可微分運算
矩陣乘法、卷積、逐元素運算、池化、正規化與損失所需的歸約運算
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from errors import ContractError, DimensionError, DomainError, NumericError
from .tensor import Tensor, is_grad_enabled

Number = Union[int, float]


def _result(data: np.ndarray, parents: Tuple[Tensor, ...], op: str, rule) -> Tensor:
    """建立運算輸出，必要時接上計算圖"""
    track = is_grad_enabled() and any(p.requires_grad for p in parents)
    if track:
        return Tensor(data, requires_grad=True, _parents=parents, _op=op, _backward=rule)
    return Tensor(data)


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: 形狀 {a.shape} 與 {b.shape} 不符（只允許相同形狀或純量）")


# ---------------------------------------------------------------------------
# 線性代數
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    矩陣乘法 C = A·B

    Args:
        a: m×k 張量
        b: k×n 張量

    Returns:
        Tensor: m×n 張量

    Raises:
        DimensionError: 非二維或內維不符
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: 形狀 {a.shape} 與 {b.shape} 無法相乘")
    a_data, b_data = a.data, b.data

    def rule(grad):
        return grad @ b_data.T, a_data.T @ grad

    return _result(a_data @ b_data, (a, b), "matmul", rule)


def transpose(x: Tensor) -> Tensor:
    """二維轉置"""
    if x.ndim != 2:
        raise DimensionError(f"transpose: 需要二維張量，收到 {x.shape}")
    return _result(x.data.T.copy(), (x,), "transpose", lambda grad: (grad.T,))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    source_shape = x.shape
    try:
        data = x.data.reshape(tuple(shape))
    except ValueError as e:
        raise DimensionError(f"reshape: 無法把 {source_shape} 變形為 {tuple(shape)}") from e
    return _result(data, (x,), "reshape", lambda grad: (grad.reshape(source_shape),))


def bias_add(x: Tensor, bias: Tensor) -> Tensor:
    """
    沿第 1 軸加上偏差（N×D 或 N×C×H×W 加上長度 D/C 的向量）

    Raises:
        DimensionError: 偏差長度與通道數不符
    """
    if bias.ndim != 1 or x.ndim < 2 or x.shape[1] != bias.shape[0]:
        raise DimensionError(f"bias_add: 形狀 {x.shape} 與偏差 {bias.shape} 不符")
    view = (1, -1) + (1,) * (x.ndim - 2)
    reduce_axes = tuple(i for i in range(x.ndim) if i != 1)

    def rule(grad):
        return grad, grad.sum(axis=reduce_axes)

    return _result(x.data + bias.data.reshape(view), (x, bias), "bias_add", rule)


# ---------------------------------------------------------------------------
# 逐元素運算
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Union[Tensor, Number]) -> Tensor:
    if not isinstance(b, Tensor):
        value = float(b)
        return _result(a.data + value, (a,), "add_scalar", lambda grad: (grad,))
    _same_shape("add", a, b)
    return _result(a.data + b.data, (a, b), "add", lambda grad: (grad, grad))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _result(a.data - b.data, (a, b), "sub", lambda grad: (grad, -grad))


def sub_scalar(x: Tensor, value: Number) -> Tensor:
    return _result(x.data - float(value), (x,), "sub_scalar", lambda grad: (grad,))


def mul(a: Tensor, b: Union[Tensor, Number]) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, float(b))
    _same_shape("mul", a, b)
    a_data, b_data = a.data, b.data
    return _result(a_data * b_data, (a, b), "mul", lambda grad: (grad * b_data, grad * a_data))


def scale(x: Tensor, factor: Number) -> Tensor:
    factor = float(factor)
    return _result(x.data * factor, (x,), "scale", lambda grad: (grad * factor,))


def relu(x: Tensor) -> Tensor:
    # 次梯度在 0 取 0
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0).astype(x.dtype), (x,), "relu",
                   lambda grad: (grad * mask,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _result(out, (x,), "exp", lambda grad: (grad * out,))


def log(x: Tensor) -> Tensor:
    """
    自然對數

    Raises:
        DomainError: 輸入含非正值
    """
    if np.any(x.data <= 0):
        raise DomainError(f"log: 輸入含非正值（最小值 {float(x.data.min())}）")
    x_data = x.data
    return _result(np.log(x_data), (x,), "log", lambda grad: (grad / x_data,))


# ---------------------------------------------------------------------------
# 歸約
# ---------------------------------------------------------------------------

def sum(x: Tensor) -> Tensor:  # noqa: A001
    shape = x.shape
    return _result(np.asarray(x.data.sum(), dtype=x.dtype), (x,), "sum",
                   lambda grad: (np.broadcast_to(grad, shape).astype(grad.dtype),))


def mean(x: Tensor) -> Tensor:
    shape, count = x.shape, max(x.size, 1)

    def rule(grad):
        return (np.broadcast_to(grad / count, shape).astype(grad.dtype),)

    return _result(np.asarray(x.data.mean(), dtype=x.dtype), (x,), "mean", rule)


def logsumexp_rows(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    逐列 log-sum-exp，先減去列最大值以維持穩定

    Args:
        x: N×M 張量
        mask: N×M 布林陣列，True 代表納入加總；每列至少需一個 True

    Returns:
        Tensor: 長度 N 的向量
    """
    if x.ndim != 2:
        raise DimensionError(f"logsumexp_rows: 需要二維張量，收到 {x.shape}")
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    if mask.shape != x.shape:
        raise DimensionError(f"logsumexp_rows: mask 形狀 {mask.shape} 與 {x.shape} 不符")
    if not np.all(mask.any(axis=1)):
        raise ContractError("logsumexp_rows: 每列至少需要一個納入的元素")

    masked = np.where(mask, x.data, -np.inf)
    row_max = masked.max(axis=1, keepdims=True)
    shifted = np.where(mask, np.exp(masked - row_max), 0.0).astype(x.dtype)
    totals = shifted.sum(axis=1, keepdims=True)
    out = (row_max + np.log(totals)).reshape(-1).astype(x.dtype)
    weights = shifted / totals

    def rule(grad):
        return (grad[:, None] * weights,)

    return _result(out, (x,), "logsumexp_rows", rule)


def gather_cols(x: Tensor, cols: np.ndarray) -> Tensor:
    """取出每列指定欄位的值：out[i] = x[i, cols[i]]"""
    cols = np.asarray(cols, dtype=np.int64)
    if x.ndim != 2 or cols.shape != (x.shape[0],):
        raise DimensionError(f"gather_cols: 形狀 {x.shape} 與索引 {cols.shape} 不符")
    rows = np.arange(x.shape[0])
    shape = x.shape

    def rule(grad):
        full = np.zeros(shape, dtype=grad.dtype)
        full[rows, cols] = grad
        return (full,)

    return _result(x.data[rows, cols].copy(), (x,), "gather_cols", rule)


# ---------------------------------------------------------------------------
# 卷積與池化
# ---------------------------------------------------------------------------

def _output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0,
           bias: Optional[Tensor] = None) -> Tensor:
    """
    二維互相關（零填補）

    Args:
        x: N×C×H×W 輸入
        w: F×C×kh×kw 卷積核
        stride: 步幅（正整數）
        padding: 四邊零填補寬度
        bias: 可選，長度 F 的偏差

    Returns:
        Tensor: N×F×H'×W'，H' = (H + 2·padding − kh)/stride + 1

    Raises:
        DimensionError: 通道不符或輸出尺寸非正
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d: 輸入 {x.shape} 與卷積核 {w.shape} 不相容")
    if stride < 1 or padding < 0:
        raise DimensionError(f"conv2d: stride={stride}, padding={padding} 不合法")
    n, c, h, width = x.shape
    f, _, kh, kw = w.shape
    out_h = _output_extent(h, kh, stride, padding)
    out_w = _output_extent(width, kw, stride, padding)
    if kh > h + 2 * padding or kw > width + 2 * padding or out_h <= 0 or out_w <= 0:
        raise DimensionError(
            f"conv2d: 輸入 {x.shape} 與卷積核 {w.shape}（padding={padding}）輸出尺寸非正")

    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    span_h = stride * (out_h - 1) + 1
    span_w = stride * (out_w - 1) + 1
    cols = np.empty((n, c, kh, kw, out_h, out_w), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = padded[:, :, i:i + span_h:stride, j:j + span_w:stride]
    out = np.tensordot(cols, w.data, axes=([1, 2, 3], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    w_data = w.data
    padded_shape = padded.shape

    def rule(grad):
        grad_w = np.tensordot(grad, cols, axes=([0, 2, 3], [0, 4, 5]))
        grad_cols = np.tensordot(grad, w_data, axes=([1], [0]))  # N×H'×W'×C×kh×kw
        grad_padded = np.zeros(padded_shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                grad_padded[:, :, i:i + span_h:stride, j:j + span_w:stride] += \
                    grad_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        grad_x = grad_padded[:, :, padding:padding + h, padding:padding + width]
        grads = [np.ascontiguousarray(grad_x), grad_w]
        if bias is not None:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, w) if bias is None else (x, w, bias)
    if bias is not None:
        if bias.shape != (f,):
            raise DimensionError(f"conv2d: 偏差形狀 {bias.shape} 應為 ({f},)")
        out = out + bias.data.reshape(1, f, 1, 1)
    return _result(out, parents, "conv2d", rule)


def maxpool2d(x: Tensor, kernel: int, stride: Optional[int] = None) -> Tensor:
    """
    最大池化；反向把梯度送回最大值位置（並列時取第一個）

    Raises:
        DimensionError: 視窗大於輸入
    """
    stride = kernel if stride is None else stride
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d: 需要 N×C×H×W，收到 {x.shape}")
    n, c, h, width = x.shape
    if kernel < 1 or stride < 1 or kernel > h or kernel > width:
        raise DimensionError(f"maxpool2d: 視窗 {kernel} 大於輸入 {x.shape}")
    out_h = _output_extent(h, kernel, stride, 0)
    out_w = _output_extent(width, kernel, stride, 0)
    span_h = stride * (out_h - 1) + 1
    span_w = stride * (out_w - 1) + 1

    windows = np.empty((n, c, out_h, out_w, kernel * kernel), dtype=x.dtype)
    for i in range(kernel):
        for j in range(kernel):
            windows[..., i * kernel + j] = x.data[:, :, i:i + span_h:stride, j:j + span_w:stride]
    argmax = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    shape = x.shape

    def rule(grad):
        grad_x = np.zeros(shape, dtype=grad.dtype)
        for i in range(kernel):
            for j in range(kernel):
                routed = np.where(argmax == i * kernel + j, grad, 0)
                grad_x[:, :, i:i + span_h:stride, j:j + span_w:stride] += routed
        return (grad_x,)

    return _result(np.ascontiguousarray(out), (x,), "maxpool2d", rule)


def global_avg_pool(x: Tensor) -> Tensor:
    """N×C×H×W → N×C 空間平均"""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool: 需要 N×C×H×W，收到 {x.shape}")
    shape = x.shape
    area = shape[2] * shape[3]

    def rule(grad):
        spread = np.broadcast_to((grad / area)[:, :, None, None], shape)
        return (np.ascontiguousarray(spread),)

    return _result(x.data.mean(axis=(2, 3)), (x,), "global_avg_pool", rule)


# ---------------------------------------------------------------------------
# 正規化與損失
# ---------------------------------------------------------------------------

def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """
    逐列 L2 正規化：row / max(‖row‖₂, eps)

    Args:
        x: N×D 張量
        eps: 防止零向量除以零
    """
    if x.ndim != 2:
        raise DimensionError(f"l2_normalize: 需要 N×D，收到 {x.shape}")
    x_data = x.data
    norms = np.sqrt((x_data * x_data).sum(axis=1, keepdims=True))
    active = norms >= eps
    denom = np.where(active, norms, eps).astype(x.dtype)
    out = x_data / denom

    def rule(grad):
        projection = (out * grad).sum(axis=1, keepdims=True)
        grad_active = (grad - out * projection) / denom
        grad_clamped = grad / denom
        return (np.where(active, grad_active, grad_clamped),)

    return _result(out, (x,), "l2_normalize", rule)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """
    多類別 softmax 交叉熵（批次平均）

    Args:
        logits: N×K
        labels: 長度 N 的類別索引
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"softmax_cross_entropy: logits {logits.shape} 與標籤 {labels.shape} 不符")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise DimensionError(f"softmax_cross_entropy: 標籤超出 0..{logits.shape[1] - 1}")
    n = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = np.asarray(-log_probs[rows, labels].mean(), dtype=logits.dtype)
    probs = np.exp(log_probs)

    def rule(grad):
        delta = probs.copy()
        delta[rows, labels] -= 1.0
        return (delta * (grad / n),)

    return _result(loss, (logits,), "softmax_cross_entropy", rule)


def sigmoid_bce(logits: Tensor, targets: np.ndarray) -> Tensor:
    """
    逐類別 sigmoid 二元交叉熵（對所有元素平均）

    Args:
        logits: N×K
        targets: N×K 的 0/1 陣列
    """
    targets = np.asarray(targets, dtype=logits.dtype)
    if targets.shape != logits.shape:
        raise DimensionError(f"sigmoid_bce: logits {logits.shape} 與標籤 {targets.shape} 不符")
    x = logits.data
    loss_terms = np.maximum(x, 0) - x * targets + np.log1p(np.exp(-np.abs(x)))
    count = max(x.size, 1)
    probs = sigmoid_probabilities(x)

    def rule(grad):
        return ((probs - targets) * (grad / count),)

    return _result(np.asarray(loss_terms.mean(), dtype=logits.dtype), (logits,), "sigmoid_bce", rule)


def softmax_probabilities(logits: np.ndarray) -> np.ndarray:
    """推論用 softmax（不建立計算圖）"""
    shifted = logits - logits.max(axis=1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=1, keepdims=True)


def sigmoid_probabilities(logits: np.ndarray) -> np.ndarray:
    """推論用 sigmoid，兩側皆數值穩定"""
    positive = logits >= 0
    exp_neg = np.exp(-np.abs(logits))
    return np.where(positive, 1.0 / (1.0 + exp_neg), exp_neg / (1.0 + exp_neg)).astype(logits.dtype)


def check_finite(x: Tensor, name: str) -> None:
    """輸入含 NaN/Inf 時拋出數值錯誤"""
    if not np.all(np.isfinite(x.data)):
        raise NumericError(f"{name}: 含非有限值")


__all__ = [
    'matmul', 'transpose', 'reshape', 'bias_add',
    'add', 'sub', 'sub_scalar', 'mul', 'scale', 'relu', 'exp', 'log',
    'sum', 'mean', 'logsumexp_rows', 'gather_cols',
    'conv2d', 'maxpool2d', 'global_avg_pool',
    'l2_normalize', 'softmax_cross_entropy', 'sigmoid_bce',
    'softmax_probabilities', 'sigmoid_probabilities', 'check_finite',
]
