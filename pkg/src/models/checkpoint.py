"""
MCK1 檢查點容器

  magic "MCK1" | u32 format_version | u32 長度 + JSON 標頭（stage、step、設定快照）
  | u32 參數數量 × (u32 名稱長度, 名稱, u64 長度, RT1)
  | u32 最佳化器狀態數量 × (同上)
  | u32 長度 + RNG 狀態 JSON

所有 JSON 以排序鍵輸出，同一內容必定得到相同位元組。
"""

import json
import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from autodiff import decode_rt1, encode_rt1
from errors import CheckpointError, ImageDecodeError
from tools.file_tools import write_bytes
from .heads import Network, network_from_description

logger = logging.getLogger(__name__)

MCK1_MAGIC = b"MCK1"
FORMAT_VERSION = 1
STAGES = ("init", "simclr", "micle", "finetune")


@dataclass
class Checkpoint:
    """檢查點內容"""
    stage: str
    config: Dict[str, Any]
    params: "OrderedDict[str, np.ndarray]"
    optimizer_state: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    rng_state: Dict[str, Any] = field(default_factory=dict)
    step: int = 0
    format_version: int = FORMAT_VERSION

    @property
    def model_description(self) -> Dict[str, Any]:
        return self.config["model"]

    def build_network(self) -> Network:
        """重建網路並載入參數"""
        network = network_from_description(self.model_description)
        restore_parameters(network, self)
        return network


def _json_bytes(data: Any) -> bytes:
    return json.dumps(data, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _encode_table(table: Dict[str, np.ndarray]) -> bytes:
    chunks = [struct.pack("<I", len(table))]
    for name, array in table.items():
        encoded_name = name.encode("utf-8")
        blob = encode_rt1(np.asarray(array))
        chunks.append(struct.pack("<I", len(encoded_name)) + encoded_name)
        chunks.append(struct.pack("<Q", len(blob)) + blob)
    return b"".join(chunks)


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.cursor = 0

    def take(self, size: int) -> bytes:
        if self.cursor + size > len(self.payload):
            raise CheckpointError("檢查點資料截斷")
        chunk = self.payload[self.cursor:self.cursor + size]
        self.cursor += size
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def table(self) -> "OrderedDict[str, np.ndarray]":
        (count,) = self.unpack("<I")
        table: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for _ in range(count):
            (name_len,) = self.unpack("<I")
            name = self.take(name_len).decode("utf-8")
            (blob_len,) = self.unpack("<Q")
            try:
                array, _ = decode_rt1(self.take(blob_len))
            except ImageDecodeError as e:
                raise CheckpointError(f"參數 {name}: {e}")
            table[name] = array
        return table

    def json(self) -> Any:
        (length,) = self.unpack("<I")
        return json.loads(self.take(length).decode("utf-8"))


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    header = {"stage": checkpoint.stage, "step": int(checkpoint.step), "config": checkpoint.config}
    header_bytes = _json_bytes(header)
    rng_bytes = _json_bytes(checkpoint.rng_state)
    return b"".join([
        MCK1_MAGIC,
        struct.pack("<I", checkpoint.format_version),
        struct.pack("<I", len(header_bytes)), header_bytes,
        _encode_table(checkpoint.params),
        _encode_table(checkpoint.optimizer_state),
        struct.pack("<I", len(rng_bytes)), rng_bytes,
    ])


def decode_checkpoint(payload: bytes) -> Checkpoint:
    """
    Raises:
        CheckpointError: magic 或版本不符、資料截斷
    """
    reader = _Reader(payload)
    if reader.take(4) != MCK1_MAGIC:
        raise CheckpointError("不是 MCK1 檢查點")
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"檢查點版本 {version} 不受支援（目前為 {FORMAT_VERSION}）")
    header = reader.json()
    params = reader.table()
    optimizer_state = reader.table()
    rng_state = reader.json()
    if reader.cursor != len(payload):
        raise CheckpointError("檢查點結尾有多餘資料")
    return Checkpoint(stage=header["stage"], config=header["config"], params=params,
                      optimizer_state=optimizer_state, rng_state=rng_state,
                      step=int(header.get("step", 0)), format_version=version)


def save_checkpoint(path: Union[str, Path], network: Network, stage: str,
                    config: Dict[str, Any], optimizer_state: Dict[str, np.ndarray] = None,
                    rng_state: Dict[str, Any] = None, step: int = 0) -> Checkpoint:
    """
    儲存網路參數、最佳化器狀態與 RNG 狀態

    Args:
        path: 輸出路徑
        network: 網路
        stage: simclr / micle / finetune（或 init）
        config: 執行設定快照；模型結構另外記錄於 config["model"]
    """
    if stage not in STAGES:
        raise CheckpointError(f"未知的 stage: {stage}")
    snapshot = dict(config)
    snapshot["model"] = network.describe()
    checkpoint = Checkpoint(
        stage=stage,
        config=snapshot,
        params=OrderedDict((name, p.data.copy()) for name, p in network.parameters().items()),
        optimizer_state=OrderedDict(optimizer_state or {}),
        rng_state=dict(rng_state or {}),
        step=step,
    )
    write_bytes(path, encode_checkpoint(checkpoint))
    logger.info("寫出檢查點 %s（stage=%s, step=%d）", path, stage, step)
    return checkpoint


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"檢查點不存在: {path}")
    return decode_checkpoint(path.read_bytes())


def restore_parameters(network: Network, checkpoint: Checkpoint, strict: bool = True) -> None:
    """
    以檢查點參數覆寫網路參數

    Args:
        strict: True 時網路的每個參數都必須存在於檢查點

    Raises:
        CheckpointError: 缺少參數或形狀不符
    """
    params = network.parameters()
    for name, param in params.items():
        if name not in checkpoint.params:
            if strict:
                raise CheckpointError(f"檢查點缺少參數 {name}")
            continue
        stored = checkpoint.params[name]
        if stored.shape != param.shape:
            raise CheckpointError(f"參數 {name} 形狀不符：檢查點 {stored.shape}，目前設定 {param.shape}")
    for module in network.modules:
        module.load_arrays(checkpoint.params)


__all__ = [
    'MCK1_MAGIC',
    'FORMAT_VERSION',
    'STAGES',
    'Checkpoint',
    'encode_checkpoint',
    'decode_checkpoint',
    'save_checkpoint',
    'load_checkpoint',
    'restore_parameters',
]
