"""
卷積編碼器 f(·)

不含正規化層的小型卷積網路：每個 stage 由數個 3×3 conv→ReLU 區塊組成，
stage 結尾 2×2 最大池化，最後全域平均池化得到特徵 h。
"""

import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, List, Tuple

import numpy as np

from autodiff import Tensor, ops
from errors import ConfigError

logger = logging.getLogger(__name__)

RESIDUAL_SCALE = 1.0 / math.sqrt(2.0)


def he_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, dtype=None) -> Tensor:
    """He-uniform 初始化：U(−√(6/fan_in), √(6/fan_in))"""
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, dtype=dtype)


class Module:
    """具名參數的容器"""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()

    def register(self, name: str, value: Tensor) -> Tensor:
        if name in self._params:
            raise ConfigError(f"重複的參數名稱: {name}")
        value.requires_grad = True
        self._params[name] = value
        return value

    def parameters(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict(self._params)

    def parameter_count(self) -> int:
        return sum(p.size for p in self._params.values())

    def zero_grad(self) -> None:
        for param in self._params.values():
            param.zero_grad()

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        """以陣列覆寫同名參數（形狀需相同，由呼叫端先驗證）"""
        for name, param in self._params.items():
            if name in arrays:
                param.data = np.ascontiguousarray(arrays[name], dtype=param.dtype).copy()

    def astype(self, dtype) -> None:
        """原地轉換所有參數的型別"""
        for param in self._params.values():
            param.data = param.data.astype(dtype)
            param.zero_grad()


@dataclass
class EncoderConfig:
    """編碼器設定"""
    widths: Tuple[int, ...] = (32, 64, 128)
    blocks_per_stage: Tuple[int, ...] = (2, 2, 2)
    input_size: Tuple[int, int] = (32, 32)
    in_channels: int = 3
    width_multiplier: float = 1.0
    residual: bool = True

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if isinstance(self.blocks_per_stage, int):
            self.blocks_per_stage = (self.blocks_per_stage,) * len(self.widths)
        self.blocks_per_stage = tuple(int(b) for b in self.blocks_per_stage)
        self.input_size = tuple(int(s) for s in self.input_size)

    @property
    def stage_widths(self) -> List[int]:
        return [max(1, int(round(w * self.width_multiplier))) for w in self.widths]

    @property
    def feature_dim(self) -> int:
        """全域平均池化後的特徵維度 = 最後一個 stage 的通道數"""
        return self.stage_widths[-1]

    def validate(self) -> None:
        if not self.widths or len(self.widths) != len(self.blocks_per_stage):
            raise ConfigError(f"widths {self.widths} 與 blocks_per_stage {self.blocks_per_stage} 長度不符")
        if any(w <= 0 for w in self.widths) or any(b <= 0 for b in self.blocks_per_stage):
            raise ConfigError("widths 與 blocks_per_stage 必須為正")
        if self.in_channels <= 0 or self.width_multiplier <= 0:
            raise ConfigError("in_channels 與 width_multiplier 必須為正")
        extent = [s // (2 ** len(self.widths)) for s in self.input_size]
        if min(extent) <= 0:
            raise ConfigError(
                f"輸入 {self.input_size} 經過 {len(self.widths)} 次池化後空間尺寸非正")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for key in ("widths", "blocks_per_stage", "input_size"):
            data[key] = list(data[key])
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EncoderConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"encoder 設定含未知欄位: {', '.join(unknown)}")
        return cls(**data)


class Encoder(Module):
    """編碼器 f(·)：影像 N×C×H×W → 特徵 N×D"""

    def __init__(self, config: EncoderConfig, init_seed: int = 0, dtype=None):
        super().__init__()
        config.validate()
        self.config = config
        self.init_seed = int(init_seed)
        rng = np.random.default_rng(self.init_seed)
        in_channels = config.in_channels
        self.layout: List[List[str]] = []
        for i, (width, blocks) in enumerate(zip(config.stage_widths, config.blocks_per_stage)):
            stage = []
            for j in range(blocks):
                prefix = f"encoder.stage{i}.block{j}.conv"
                fan_in = in_channels * 9
                self.register(f"{prefix}.weight",
                              he_uniform(rng, (width, in_channels, 3, 3), fan_in, dtype))
                self.register(f"{prefix}.bias",
                              Tensor(np.zeros(width), requires_grad=True, dtype=dtype))
                stage.append(prefix)
                in_channels = width
            self.layout.append(stage)

    @property
    def feature_dim(self) -> int:
        return self.config.feature_dim

    def forward(self, x: Tensor) -> Tensor:
        """
        前向傳播

        Args:
            x: N×C×H×W 影像批次

        Returns:
            Tensor: N×feature_dim 特徵 h
        """
        for stage in self.layout:
            for prefix in stage:
                weight = self._params[f"{prefix}.weight"]
                bias = self._params[f"{prefix}.bias"]
                branch = ops.relu(ops.conv2d(x, weight, stride=1, padding=1, bias=bias))
                if self.config.residual and branch.shape == x.shape:
                    x = ops.scale(ops.add(x, branch), RESIDUAL_SCALE)
                else:
                    x = branch
            x = ops.maxpool2d(x, 2)
        return ops.global_avg_pool(x)

    __call__ = forward


def build_encoder(config: EncoderConfig, init_seed: int = 0, dtype=None) -> Encoder:
    """
    建立編碼器參數（He-uniform、以種子決定）

    Raises:
        ConfigError: 設定導致非正空間尺寸等錯誤
    """
    encoder = Encoder(config, init_seed, dtype)
    logger.debug("編碼器: widths=%s, 參數量=%d", config.stage_widths, encoder.parameter_count())
    return encoder


__all__ = ['Module', 'EncoderConfig', 'Encoder', 'build_encoder', 'he_uniform']
