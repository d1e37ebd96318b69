"""
影像解碼與編碼
支援 PGM (P5)、PPM (P6) 與 RT1 浮點張量
"""

import logging
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from autodiff import Tensor, decode_rt1, encode_rt1, RT1_MAGIC
from errors import ImageDecodeError
from tools.file_tools import write_bytes

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_PNM_CHANNELS = {b"P5": 1, b"P6": 3}


def _read_header_tokens(payload: bytes, count: int) -> Tuple[List[bytes], int]:
    """讀取 PNM 標頭的前 count 個欄位（允許 # 註解），回傳欄位與像素起點"""
    tokens: List[bytes] = []
    cursor = 0
    size = len(payload)
    while len(tokens) < count:
        while cursor < size and payload[cursor:cursor + 1].isspace():
            cursor += 1
        if cursor >= size:
            raise ImageDecodeError("PNM: 標頭不完整")
        if payload[cursor:cursor + 1] == b"#":
            while cursor < size and payload[cursor:cursor + 1] not in (b"\n", b"\r"):
                cursor += 1
            continue
        start = cursor
        while cursor < size and not payload[cursor:cursor + 1].isspace():
            cursor += 1
        tokens.append(payload[start:cursor])
    # 標頭與像素之間恰好一個空白字元
    if cursor >= size or not payload[cursor:cursor + 1].isspace():
        raise ImageDecodeError("PNM: 標頭後缺少分隔字元")
    return tokens, cursor + 1


def decode_pnm(payload: bytes) -> np.ndarray:
    """
    解碼二進位 PGM / PPM

    Args:
        payload: 檔案內容

    Returns:
        np.ndarray: C×H×W，值域 [0,1]（以 maxval 線性縮放）
    """
    tokens, offset = _read_header_tokens(payload, 4)
    magic = tokens[0]
    if magic not in _PNM_CHANNELS:
        raise ImageDecodeError(f"不支援的影像格式: {magic[:2]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise ImageDecodeError(f"PNM: 標頭數值錯誤 {tokens[1:4]}")
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise ImageDecodeError(f"PNM: 標頭數值超出範圍 ({width}×{height}, maxval={maxval})")

    channels = _PNM_CHANNELS[magic]
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    if len(payload) < offset + count * dtype.itemsize:
        raise ImageDecodeError(f"PNM: 像素資料不足（需要 {count} 個樣本）")
    raw = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
    pixels = raw.reshape(height, width, channels).transpose(2, 0, 1).astype(np.float64)
    return np.clip(pixels / maxval, 0.0, 1.0)


def decode_image_array(path: PathLike) -> np.ndarray:
    """
    解碼影像為 numpy 陣列（C×H×W，值域 [0,1]）

    Raises:
        ImageDecodeError: 格式不支援、標頭損毀或 RT1 值超出 [0,1]
    """
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise ImageDecodeError(f"{path}: 無法讀取影像 ({e})")

    try:
        if payload[:4] == RT1_MAGIC:
            array, _ = decode_rt1(payload)
            if array.ndim == 2:
                array = array[None]
            if array.ndim != 3:
                raise ImageDecodeError(f"RT1 影像需要 C×H×W，收到形狀 {array.shape}")
            if array.size and (not np.all(np.isfinite(array)) or array.min() < 0 or array.max() > 1):
                raise ImageDecodeError("RT1 影像數值超出 [0,1]")
            return array
        return decode_pnm(payload)
    except ImageDecodeError as e:
        raise ImageDecodeError(f"{path}: {e}")


def decode_image(path: PathLike, dtype=None) -> Tensor:
    """解碼影像為張量（C×H×W）"""
    return Tensor(decode_image_array(path), dtype=dtype)


def encode_pnm(image: np.ndarray) -> bytes:
    """
    將 C×H×W、值域 [0,1] 的陣列編碼為 8 位元 PGM（C=1）或 PPM（C=3）
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise ImageDecodeError(f"PNM 編碼需要 1 或 3 通道的 C×H×W，收到 {image.shape}")
    channels, height, width = image.shape
    magic = b"P5" if channels == 1 else b"P6"
    pixels = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = magic + f"\n{width} {height}\n255\n".encode("ascii")
    return header + pixels.transpose(1, 2, 0).tobytes()


def write_image(path: PathLike, image: np.ndarray) -> Path:
    """依副檔名寫出影像：.rt1 保留浮點，其餘寫成 PNM"""
    path = Path(path)
    if path.suffix.lower() == ".rt1":
        return write_bytes(path, encode_rt1(np.asarray(image)))
    return write_bytes(path, encode_pnm(image))


__all__ = ['decode_pnm', 'decode_image_array', 'decode_image', 'encode_pnm', 'write_image']
