"""
自動微分模組
稠密張量、反向模式自動微分與 RT1 序列化
"""

from .tensor import (
    Tensor,
    tensor,
    ComputeGraph,
    GraphNode,
    backward,
    no_grad,
    is_grad_enabled,
    default_dtype,
    get_default_dtype,
    set_default_dtype,
)
from . import ops
from .serialization import RT1_MAGIC, encode_rt1, decode_rt1, save_rt1, load_rt1

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
    'ops',
    'RT1_MAGIC',
    'encode_rt1',
    'decode_rt1',
    'save_rt1',
    'load_rt1',
]
