"""
階段設定：把 RunConfig 依階段與任務類型解析成具體數值
"""

import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple

from corpus.manifest import TaskKind
from errors import ConfigError
from models import EncoderConfig
from optim import LarsConfig, ScheduleKind
from run_config import RunConfig

logger = logging.getLogger(__name__)


class Stage(Enum):
    SIMCLR = "simclr"
    MICLE = "micle"
    FINETUNE = "finetune"


# 桌機規模預設值
DEFAULT_STEPS = {Stage.SIMCLR: 2000, Stage.MICLE: 1000, Stage.FINETUNE: 1000}
DEFAULT_BATCH_SIZE = 64
DEFAULT_LR = {Stage.SIMCLR: 1.0, Stage.MICLE: 0.5, Stage.FINETUNE: 0.05}
DEFAULT_OPTIMIZER = {Stage.SIMCLR: "lars", Stage.MICLE: "lars", Stage.FINETUNE: "sgd"}
DEFAULT_WEIGHT_DECAY = {"lars": 1e-6, "sgd": 0.0}

# 原始規模的參考值，只記錄不使用
REFERENCE_SCALE = {
    Stage.SIMCLR: {"derm": {"batch_size": 512, "lr": 0.3}, "xray": {"batch_size": 1024, "lr": 0.5},
                   "steps": 150000},
    Stage.MICLE: {"batch_size": 128, "lr": 0.1, "steps": 100000},
    Stage.FINETUNE: {"batch_size": 256, "steps": 30000, "momentum": 0.9},
}


def default_preset(stage: Stage, task_kind: TaskKind) -> str:
    xray = task_kind == TaskKind.MULTILABEL
    if stage == Stage.FINETUNE:
        return "xray_finetune" if xray else "finetune"
    return "xray_pretrain" if xray else "derm_pretrain"


@dataclass
class StageConfig:
    """單一訓練階段的完整設定"""
    stage: Stage
    manifest_path: str
    preset: str
    augment_overrides: Dict[str, Dict[str, Any]]
    steps: int
    batch_size: int
    optimizer: str
    lr: float
    momentum: float
    weight_decay: float
    trust_coefficient: float
    exclude_from_adaptation: Tuple[str, ...]
    schedule: ScheduleKind
    warmup_steps: Optional[int]
    temperature: float
    encoder: EncoderConfig
    projection_dim: int
    init_seed: int
    seed: int
    out_dir: str
    init_checkpoint: Optional[str] = None
    from_scratch: bool = False
    eval_every: int = 0
    log_every: int = 50
    label_fraction: float = 1.0
    fraction_seed: int = 0
    sweep: bool = False
    selection_metric: Optional[str] = None
    record_walltime: bool = True
    divergence_threshold: float = 1e4
    reference_scale: Dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        """
        Raises:
            ConfigError: 數值不合法，或 micle 階段缺少初始化檢查點
        """
        if self.steps < 0:
            raise ConfigError(f"steps 不可為負: {self.steps}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size 必須 ≥ 2，收到 {self.batch_size}")
        if self.lr < 0:
            raise ConfigError(f"lr 不可為負: {self.lr}")
        if self.optimizer not in ("lars", "sgd"):
            raise ConfigError(f"未知的最佳化器: {self.optimizer}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature 必須為正，收到 {self.temperature}")
        if self.stage == Stage.MICLE and not self.init_checkpoint and not self.from_scratch:
            raise ConfigError("micle 階段需要 init_checkpoint，或明確設定 stage.from_scratch = true")
        if not 0 < self.label_fraction <= 1:
            raise ConfigError(f"label_fraction 必須在 (0, 1]，收到 {self.label_fraction}")
        if not self.manifest_path:
            raise ConfigError("未指定 data.manifest")

    def lars_config(self) -> LarsConfig:
        return LarsConfig(base_lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay,
                          trust_coefficient=self.trust_coefficient,
                          exclude_from_adaptation=self.exclude_from_adaptation)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["stage"] = self.stage.value
        data["schedule"] = self.schedule.value
        data["encoder"] = self.encoder.to_dict()
        data["exclude_from_adaptation"] = list(self.exclude_from_adaptation)
        return data

    def checkpoint_snapshot(self) -> Dict[str, Any]:
        """寫入檢查點的設定快照；不含路徑，相同設定在不同目錄下產生相同位元組"""
        data = self.to_dict()
        for key in ("out_dir", "manifest_path", "init_checkpoint"):
            data.pop(key, None)
        return data


def resolve_stage(run: RunConfig, stage: Stage, task_kind: TaskKind = TaskKind.MULTICLASS,
                  image_size: Tuple[int, int] = (32, 32)) -> StageConfig:
    """
    套用階段預設值

    Args:
        run: 執行設定
        stage: 目標階段
        task_kind: 清單任務類型（決定 derm / xray 預設）
        image_size: 清單的影像尺寸（編碼器輸入）
    """
    if run.stage.stage is not None and run.stage.stage != stage.value:
        raise ConfigError(f"設定檔 stage.stage={run.stage.stage} 與執行的階段 {stage.value} 不符")
    optimizer = run.optim.name or DEFAULT_OPTIMIZER[stage]
    schedule = run.optim.schedule or ("constant" if stage == Stage.FINETUNE else "warmup_cosine")
    try:
        schedule_kind = ScheduleKind(schedule)
    except ValueError:
        raise ConfigError(f"未知的排程: {schedule}")
    encoder = EncoderConfig(
        widths=tuple(run.model.widths),
        blocks_per_stage=tuple(run.model.blocks_per_stage),
        input_size=tuple(image_size),
        in_channels=run.model.in_channels,
        width_multiplier=run.model.width_multiplier,
        residual=run.model.residual,
    )
    encoder.validate()
    reference_scale = dict(REFERENCE_SCALE[stage])
    reference_scale.update(run.stage.reference_scale)
    config = StageConfig(
        stage=stage,
        manifest_path=run.data.manifest,
        preset=run.augment.preset or default_preset(stage, task_kind),
        augment_overrides=dict(run.augment.overrides),
        steps=int(run.stage.steps if run.stage.steps is not None else DEFAULT_STEPS[stage]),
        batch_size=int(run.stage.batch_size or DEFAULT_BATCH_SIZE),
        optimizer=optimizer,
        lr=float(run.optim.lr if run.optim.lr is not None else DEFAULT_LR[stage]),
        momentum=float(run.optim.momentum),
        weight_decay=float(run.optim.weight_decay if run.optim.weight_decay is not None
                           else DEFAULT_WEIGHT_DECAY.get(optimizer, 0.0)),
        trust_coefficient=float(run.optim.trust_coefficient),
        exclude_from_adaptation=tuple(run.optim.exclude_from_adaptation),
        schedule=schedule_kind,
        warmup_steps=run.optim.warmup_steps,
        temperature=float(run.stage.temperature),
        encoder=encoder,
        projection_dim=int(run.model.projection_dim),
        init_seed=int(run.model.init_seed if run.model.init_seed is not None else run.seed),
        seed=int(run.seed),
        out_dir=run.out_dir,
        init_checkpoint=run.stage.init_checkpoint,
        from_scratch=bool(run.stage.from_scratch),
        eval_every=int(run.stage.eval_every),
        log_every=int(run.stage.log_every),
        label_fraction=float(run.data.label_fraction),
        fraction_seed=int(run.data.fraction_seed if run.data.fraction_seed is not None else run.seed),
        sweep=bool(run.stage.sweep),
        selection_metric=run.stage.selection_metric,
        record_walltime=bool(run.stage.record_walltime),
        divergence_threshold=float(run.stage.divergence_threshold),
        reference_scale=reference_scale,
    )
    config.validate()
    return config


__all__ = [
    'Stage',
    'StageConfig',
    'DEFAULT_STEPS',
    'DEFAULT_BATCH_SIZE',
    'REFERENCE_SCALE',
    'default_preset',
    'resolve_stage',
]
