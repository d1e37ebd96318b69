"""
RT1 原始張量容器格式

  magic "RT1\\0" | u8 dtype code | u8 rank | rank × u64 LE extents | raw LE values
"""

import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from errors import ImageDecodeError

RT1_MAGIC = b"RT1\x00"

_DTYPE_CODES = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
}
_CODE_DTYPES = {code: dtype for dtype, code in _DTYPE_CODES.items()}


def encode_rt1(array: np.ndarray) -> bytes:
    """
    將陣列編碼為 RT1 位元組

    Args:
        array: float32 或 float64 陣列

    Returns:
        bytes: RT1 編碼結果
    """
    array = np.asarray(array)
    dtype = array.dtype.newbyteorder("<")
    if dtype not in _DTYPE_CODES:
        raise ValueError(f"RT1 不支援型別: {array.dtype}")
    if array.ndim > 255:
        raise ValueError(f"RT1 階數過高: {array.ndim}")
    header = RT1_MAGIC + struct.pack("<BB", _DTYPE_CODES[dtype], array.ndim)
    extents = struct.pack(f"<{array.ndim}Q", *array.shape)
    body = np.ascontiguousarray(array, dtype=dtype).tobytes(order="C")
    return header + extents + body


def decode_rt1(payload: bytes, offset: int = 0) -> Tuple[np.ndarray, int]:
    """
    從位元組解碼 RT1

    Args:
        payload: 來源位元組
        offset: 起始位置

    Returns:
        Tuple[np.ndarray, int]: (陣列, 讀取後的位置)

    Raises:
        ImageDecodeError: magic、型別或長度錯誤
    """
    if payload[offset:offset + 4] != RT1_MAGIC:
        raise ImageDecodeError("RT1: magic 不符")
    if len(payload) < offset + 6:
        raise ImageDecodeError("RT1: 標頭不完整")
    code, rank = struct.unpack_from("<BB", payload, offset + 4)
    if code not in _CODE_DTYPES:
        raise ImageDecodeError(f"RT1: 未知型別代碼 {code}")
    cursor = offset + 6
    if len(payload) < cursor + 8 * rank:
        raise ImageDecodeError("RT1: 維度資訊不完整")
    shape = struct.unpack_from(f"<{rank}Q", payload, cursor)
    cursor += 8 * rank
    dtype = _CODE_DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    nbytes = count * dtype.itemsize
    if len(payload) < cursor + nbytes:
        raise ImageDecodeError(f"RT1: 資料長度不足（需要 {nbytes} 位元組）")
    array = np.frombuffer(payload, dtype=dtype, count=count, offset=cursor).reshape(shape)
    return array.astype(dtype.newbyteorder("="), copy=True), cursor + nbytes


def save_rt1(path: Union[str, Path], array: np.ndarray) -> None:
    Path(path).write_bytes(encode_rt1(array))


def load_rt1(path: Union[str, Path]) -> np.ndarray:
    array, _ = decode_rt1(Path(path).read_bytes())
    return array


__all__ = ['RT1_MAGIC', 'encode_rt1', 'decode_rt1', 'save_rt1', 'load_rt1']
