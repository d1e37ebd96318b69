"""
執行設定（RunConfig）

JSON 設定檔分成 data / augment / model / optim / stage / eval 六個區段加上 seed 與 out_dir；
每個欄位都有預設值，未知欄位一律拒絕並指出完整路徑。
"""

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union, get_type_hints

from errors import ConfigError
from tools.file_tools import write_json

logger = logging.getLogger(__name__)

DEFAULT_SEED = 42
RESOLVED_CONFIG_NAME = "config.resolved.json"


@dataclass
class DataConfig:
    manifest: str = ""
    label_fraction: float = 1.0
    fraction_seed: Optional[int] = None


@dataclass
class AugmentConfig:
    preset: Optional[str] = None
    overrides: Dict[str, Dict[str, Any]] = field(default_factory=dict)


@dataclass
class ModelConfig:
    widths: List[int] = field(default_factory=lambda: [32, 64, 128])
    blocks_per_stage: List[int] = field(default_factory=lambda: [2, 2, 2])
    in_channels: int = 3
    width_multiplier: float = 1.0
    residual: bool = True
    projection_dim: int = 128
    init_seed: Optional[int] = None


@dataclass
class OptimConfig:
    name: Optional[str] = None
    lr: Optional[float] = None
    momentum: float = 0.9
    weight_decay: Optional[float] = None
    trust_coefficient: float = 1e-3
    exclude_from_adaptation: List[str] = field(default_factory=lambda: ["*.bias"])
    schedule: Optional[str] = None
    warmup_steps: Optional[int] = None


@dataclass
class StageSection:
    stage: Optional[str] = None
    steps: Optional[int] = None
    batch_size: Optional[int] = None
    temperature: float = 0.1
    init_checkpoint: Optional[str] = None
    from_scratch: bool = False
    eval_every: int = 0
    log_every: int = 50
    sweep: bool = False
    selection_metric: Optional[str] = None
    record_walltime: bool = True
    divergence_threshold: float = 1e4
    reference_scale: Dict[str, Any] = field(default_factory=dict)


@dataclass
class EvalConfig:
    bootstrap: int = 1000
    group_by: Optional[str] = None
    repeats: int = 1
    metrics: Optional[List[str]] = None


@dataclass
class RunConfig:
    """完整的執行設定"""
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    stage: StageSection = field(default_factory=StageSection)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = DEFAULT_SEED
    out_dir: str = "runs/default"

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        """
        由字典建立設定

        Raises:
            ConfigError: 含未知欄位（訊息帶完整路徑，例如 optim.learning_rate）
        """
        return _build(cls, data, "")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def write_resolved(self, out_dir: Optional[Union[str, Path]] = None,
                       extra: Optional[Dict[str, Any]] = None) -> Path:
        """在任何工作開始前寫出 config.resolved.json"""
        payload = {"run": self.to_dict()}
        if extra:
            payload.update(extra)
        target = Path(out_dir or self.out_dir) / RESOLVED_CONFIG_NAME
        return write_json(target, payload)


def _build(cls, data: Any, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or '設定'} 必須是 JSON 物件")
    hints = get_type_hints(cls)
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"未知的設定欄位: {', '.join(prefix + key for key in unknown)}")
    values = {}
    for name, value in data.items():
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            values[name] = _build(hint, value, f"{prefix}{name}.")
        else:
            values[name] = value
    return cls(**values)


def load_run_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """讀取設定檔；未提供路徑時使用全部預設值"""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"設定檔不存在: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: JSON 解析失敗（第 {e.lineno} 行）: {e.msg}")
    config = RunConfig.from_dict(data)
    logger.debug("載入設定 %s", path)
    return config


def apply_cli_overrides(config: RunConfig, seed: Optional[int] = None,
                        out_dir: Optional[str] = None, manifest: Optional[str] = None,
                        init_checkpoint: Optional[str] = None,
                        label_fraction: Optional[float] = None,
                        sweep: Optional[bool] = None) -> RunConfig:
    """命令列參數優先於設定檔"""
    if seed is not None:
        config.seed = int(seed)
    if out_dir is not None:
        config.out_dir = out_dir
    if manifest is not None:
        config.data.manifest = manifest
    if init_checkpoint is not None:
        config.stage.init_checkpoint = init_checkpoint
    if label_fraction is not None:
        config.data.label_fraction = float(label_fraction)
    if sweep is not None and sweep:
        config.stage.sweep = True
    return config


__all__ = [
    'DEFAULT_SEED',
    'RESOLVED_CONFIG_NAME',
    'DataConfig',
    'AugmentConfig',
    'ModelConfig',
    'OptimConfig',
    'StageSection',
    'EvalConfig',
    'RunConfig',
    'load_run_config',
    'apply_cli_overrides',
]
