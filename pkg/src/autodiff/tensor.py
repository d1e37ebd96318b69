"""
張量與計算圖核心模組
提供 Tensor 型別、反向模式自動微分與計算圖走訪
"""

import contextlib
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from errors import ContractError, DimensionError

logger = logging.getLogger(__name__)

# 反向規則：輸入輸出梯度，回傳與父節點對齊的梯度（None 表示不需要）
BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

SUPPORTED_DTYPES = (np.float32, np.float64)

_default_dtype = np.float32
_grad_enabled = True


def get_default_dtype():
    """取得目前的預設浮點型別"""
    return _default_dtype


def set_default_dtype(dtype) -> None:
    """
    設定預設浮點型別

    Args:
        dtype: np.float32 或 np.float64
    """
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in SUPPORTED_DTYPES:
        raise ValueError(f"不支援的型別: {dtype}")
    _default_dtype = dtype


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """暫時切換預設型別（驗證測試使用 float64）"""
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """停用計算圖建構（推論與最佳化器更新使用）"""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """
    稠密 n 維張量

    資料以 row-major 連續陣列保存；除梯度累加外建立後不可變。
    """

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 _parents: Tuple["Tensor", ...] = (), _op: str = "",
                 _backward: Optional[BackwardRule] = None):
        """
        初始化張量

        Args:
            data: 數值資料（純量、巢狀串列或 np.ndarray）
            requires_grad: 是否追蹤梯度
            dtype: np.float32 或 np.float64，未提供時沿用輸入或預設型別
        """
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype.type in SUPPORTED_DTYPES:
                dtype = data.dtype.type
            else:
                dtype = _default_dtype
        dtype = np.dtype(dtype).type
        if dtype not in SUPPORTED_DTYPES:
            raise ValueError(f"不支援的型別: {dtype}")

        self.data = np.ascontiguousarray(np.asarray(data, dtype=dtype))
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[Tensor] = None
        self._parents = _parents
        self._op = _op
        self._backward = _backward

    # ---- 基本屬性 ----

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype.type

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() 需要單一元素張量，目前形狀 {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """回傳資料副本"""
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        """轉換型別（不可微分，保留 requires_grad 旗標）"""
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, dtype=dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray) -> None:
        """累加梯度，形狀與型別必須與本體相同"""
        if grad.shape != self.shape:
            raise DimensionError(f"梯度形狀 {grad.shape} 與張量形狀 {self.shape} 不符")
        grad = grad.astype(self.dtype, copy=False)
        if self.grad is None:
            self.grad = Tensor(grad.copy(), dtype=self.dtype)
        else:
            self.grad = Tensor(self.grad.data + grad, dtype=self.dtype)

    def backward(self) -> None:
        """從本純量張量反向傳播"""
        backward(self)

    # ---- 運算子 ----

    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.sub(self, other)
        return ops.sub_scalar(self, float(other))

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            raise ContractError("只支援除以純量")
        return ops.scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __repr__(self):
        grad_flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={np.dtype(self.dtype).name}{grad_flag})"


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    """建立張量的便捷函數"""
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


@dataclass
class GraphNode:
    """計算圖中的一筆運算紀錄"""
    node_id: int
    op: str
    input_ids: Tuple[int, ...]
    output: Tensor
    backward_rule: Optional[BackwardRule]


class ComputeGraph:
    """
    以拓撲順序排列的計算圖

    只收錄會影響輸出且需要梯度的節點；每個節點恰好出現一次。
    """

    def __init__(self, nodes: List[GraphNode]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "ComputeGraph":
        """
        由輸出張量往回追蹤建立計算圖

        Args:
            root: 輸出張量

        Returns:
            ComputeGraph: 父節點在前、輸出在最後的節點序列
        """
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            current, expanded = stack.pop()
            if expanded:
                order.append(current)
                continue
            if id(current) in visited:
                continue
            visited.add(id(current))
            stack.append((current, True))
            for parent in current._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        ids = {id(t): index for index, t in enumerate(order)}
        nodes = [
            GraphNode(
                node_id=index,
                op=t._op or "leaf",
                input_ids=tuple(ids[id(p)] for p in t._parents if id(p) in ids),
                output=t,
                backward_rule=t._backward,
            )
            for index, t in enumerate(order)
        ]
        return cls(nodes)

    def backward(self, seed: np.ndarray) -> None:
        """依反向拓撲順序套用鏈鎖律，梯度累加至葉節點"""
        if not self.nodes:
            return
        grads: Dict[int, np.ndarray] = {id(self.nodes[-1].output): seed}
        for node in reversed(self.nodes):
            out = node.output
            grad = grads.pop(id(out), None)
            if grad is None:
                continue
            if out.is_leaf:
                if out.requires_grad:
                    out.accumulate_grad(grad)
                continue
            parent_grads = node.backward_rule(grad)
            for parent, parent_grad in zip(out._parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + parent_grad
                else:
                    grads[key] = parent_grad


def backward(loss: Tensor) -> None:
    """
    反向傳播：把 d(loss)/d(leaf) 累加到所有 requires_grad 葉節點

    Args:
        loss: 純量張量

    Raises:
        ContractError: loss 不是純量
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        shape = loss.shape if isinstance(loss, Tensor) else type(loss).__name__
        raise ContractError(f"backward() 需要純量損失，收到形狀 {shape}")
    if not loss.requires_grad:
        logger.debug("損失不需要梯度，略過反向傳播")
        return
    graph = ComputeGraph.trace(loss)
    graph.backward(np.ones(loss.shape, dtype=loss.dtype))


__all__ = [
    'Tensor',
    'tensor',
    'ComputeGraph',
    'GraphNode',
    'backward',
    'no_grad',
    'is_grad_enabled',
    'default_dtype',
    'get_default_dtype',
    'set_default_dtype',
]
