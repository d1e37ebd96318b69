"""
三階段訓練流程：SimCLR 預訓練 → MICLe 預訓練 → 監督式微調

階段之間只透過檢查點檔案傳遞狀態。
"""

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from augment import AugmentPipeline, derive_sample_seed, preset_build
from autodiff import Tensor
from contrastive import (
    EpochSampler,
    ImageItem,
    NTXentConfig,
    alignment_measure,
    build_batch_micle,
    build_batch_simclr,
    image_items,
    nt_xent_loss,
)
from corpus import Bag, Manifest, Split, TaskKind, decode_image, load_manifest, subset_by_fraction
from errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DivergenceError,
    NumericError,
    UndefinedMetricError,
    ValidationError,
)
from evaluation.evaluate import MetricsReport, build_prediction_set, evaluate_network
from evaluation.metrics import get_metric, selection_metric
from models import (
    Checkpoint,
    Network,
    attach_classifier,
    build_encoder,
    build_pretrain_network,
    load_checkpoint,
    restore_parameters,
    save_checkpoint,
)
from optim import LARS, Optimizer, Schedule, SGDMomentum, SweepGrid, build_sweep, schedule_lr
from optim.sweep import sweep_point_name, write_sweep_configs
from run_config import EvalConfig
from tools.batch_processor import BatchProcessor, parallel_map
from tools.file_tools import FileTools
from .config import Stage, StageConfig
from .train_log import TrainLog

logger = logging.getLogger(__name__)

CHECKPOINT_SUFFIX = ".mck"
METRICS_NAME = "metrics.json"
SWEEP_RESULTS_NAME = "sweep_results.csv"
PRETRAIN_INIT_STAGES = ("simclr", "micle")
FINETUNE_INIT_STAGES = ("init", "simclr", "micle", "finetune")


@dataclass
class StageResult:
    """單一階段的輸出"""
    stage: Stage
    checkpoint: Checkpoint
    checkpoint_path: Path
    network: Network
    log: TrainLog
    report: Optional[MetricsReport] = None
    validation_score: Optional[float] = None
    extra: Dict[str, Any] = field(default_factory=dict)


@dataclass
class LoopOutcome:
    steps_run: int
    best_step: Optional[int] = None
    best_score: Optional[float] = None
    best_params: Optional["OrderedDict[str, np.ndarray]"] = None
    last_eval_step: Optional[int] = None
    optimizer: Optional[Optimizer] = None
    sampler: Optional[EpochSampler] = None


# ---------------------------------------------------------------------------
# 共用工具
# ---------------------------------------------------------------------------

def checkpoint_path(out_dir, stage: Stage) -> Path:
    return Path(out_dir) / f"{stage.value}{CHECKPOINT_SUFFIX}"


def _load_manifest(cfg: StageConfig, manifest: Optional[Manifest]) -> Manifest:
    return manifest if manifest is not None else load_manifest(cfg.manifest_path)


def _build_optimizer(cfg: StageConfig, network: Network) -> Optimizer:
    if cfg.optimizer == "lars":
        return LARS(network.parameters(), cfg.lars_config())
    return SGDMomentum(network.parameters(), cfg.momentum, cfg.weight_decay)


def _effective_batch_size(cfg: StageConfig, available: int, unit: str) -> int:
    if available < 2:
        raise ContractError(f"{cfg.stage.value} 階段至少需要 2 個{unit}，只有 {available} 個")
    if available < cfg.batch_size:
        logger.warning("%s 只有 %d 個，批次大小由 %d 降為 %d", unit, available, cfg.batch_size,
                       available)
        return available
    return cfg.batch_size


def _pipeline(cfg: StageConfig) -> AugmentPipeline:
    return preset_build(cfg.preset, cfg.encoder.input_size, cfg.augment_overrides)


def _network_dtype(network: Network):
    return next(iter(network.parameters().values())).dtype


def _load_init(cfg: StageConfig, allowed: Sequence[str]) -> Checkpoint:
    ckpt = load_checkpoint(cfg.init_checkpoint)
    if ckpt.stage not in allowed:
        raise CheckpointError(
            f"{cfg.stage.value} 階段不能由 stage={ckpt.stage} 的檢查點初始化（允許: {', '.join(allowed)}）")
    return ckpt


def _snapshot(out_dir: Path, network: Network, cfg: StageConfig, step: int,
              optimizer: Optimizer, sampler: EpochSampler, name: str) -> Path:
    path = out_dir / name
    save_checkpoint(path, network, cfg.stage.value, cfg.checkpoint_snapshot(),
                    optimizer_state=optimizer.state_dict(), rng_state=sampler.state(), step=step)
    return path


def _run_loop(cfg: StageConfig, network: Network, sampler: EpochSampler,
              loss_fn: Callable[[int, list], Tensor], out_dir: Path, log: TrainLog,
              on_eval: Optional[Callable[[int], Optional[float]]] = None) -> LoopOutcome:
    """
    共用訓練迴圈：取批次 → 前向 → 反向 → 依排程更新

    Raises:
        DivergenceError: 損失為非有限值或超過門檻（先寫出診斷快照）
    """
    optimizer = _build_optimizer(cfg, network)
    schedule = Schedule(cfg.steps, cfg.warmup_steps, cfg.schedule)
    outcome = LoopOutcome(steps_run=0)
    for t in range(cfg.steps):
        step = t + 1
        lr_t = cfg.lr * schedule_lr(schedule, t)
        epoch, units = sampler.next_batch()
        optimizer.zero_grad()
        try:
            loss = loss_fn(epoch, units)
            loss_value = loss.item()
        except NumericError as e:
            logger.error("第 %d 步前向計算出現非有限值: %s", step, e)
            loss, loss_value = None, float("nan")
        if not math.isfinite(loss_value) or loss_value > cfg.divergence_threshold:
            log.append(step, lr_t, loss_value)
            log.save(out_dir)
            snapshot = _snapshot(out_dir, network, cfg, step, optimizer, sampler,
                                 f"diverged_step{step:06d}{CHECKPOINT_SUFFIX}")
            logger.error("訓練發散：step=%d loss=%s lr=%.6g epoch=%d，快照 %s", step, loss_value,
                         lr_t, epoch, snapshot)
            raise DivergenceError(step, loss_value, str(snapshot))
        loss.backward()
        optimizer.step(lr_t)
        log.append(step, lr_t, loss_value)
        outcome.steps_run = step
        if cfg.log_every and step % cfg.log_every == 0:
            logger.info("[%s] step %d/%d lr=%.5g loss=%.5f", cfg.stage.value, step, cfg.steps,
                        lr_t, loss_value)
        if cfg.eval_every and step % cfg.eval_every == 0:
            _snapshot(out_dir, network, cfg, step, optimizer, sampler,
                      f"checkpoints/{cfg.stage.value}_step{step:06d}{CHECKPOINT_SUFFIX}")
            if on_eval is not None:
                _track_best(outcome, network, step, on_eval(step))
    if on_eval is not None and outcome.last_eval_step != outcome.steps_run:
        _track_best(outcome, network, outcome.steps_run, on_eval(outcome.steps_run))
    outcome.optimizer = optimizer
    outcome.sampler = sampler
    return outcome


def _track_best(outcome: LoopOutcome, network: Network, step: int, score: Optional[float]) -> None:
    outcome.last_eval_step = step
    if score is None:
        return
    if outcome.best_score is None or score > outcome.best_score:
        outcome.best_step = step
        outcome.best_score = score
        outcome.best_params = OrderedDict(
            (name, p.data.copy()) for name, p in network.parameters().items())


def _finish(cfg: StageConfig, network: Network, outcome: LoopOutcome, out_dir: Path,
            log: TrainLog) -> Tuple[Checkpoint, Path]:
    path = checkpoint_path(out_dir, cfg.stage)
    checkpoint = save_checkpoint(path, network, cfg.stage.value, cfg.checkpoint_snapshot(),
                                 optimizer_state=outcome.optimizer.state_dict(),
                                 rng_state=outcome.sampler.state(), step=outcome.steps_run)
    log.save(out_dir)
    return checkpoint, path


# ---------------------------------------------------------------------------
# 預訓練
# ---------------------------------------------------------------------------

def _pretrain_network(cfg: StageConfig) -> Network:
    return build_pretrain_network(cfg.encoder, cfg.init_seed, cfg.projection_dim)


def _alignment(network: Network, manifest: Manifest,
               processor: Optional[BatchProcessor]) -> Optional[float]:
    bags = manifest.split(Split.VALIDATION) or manifest.split(Split.TRAIN)
    try:
        return alignment_measure(network, bags, manifest.image_size, processor)
    except ContractError:
        return None


def _pretrain(cfg: StageConfig, network: Network, manifest: Manifest,
              processor: Optional[BatchProcessor]) -> StageResult:
    out_dir = FileTools().ensure_dir(cfg.out_dir)
    pipeline = _pipeline(cfg)
    loss_cfg = NTXentConfig(temperature=cfg.temperature)
    train_bags = manifest.split(Split.TRAIN)
    dtype = _network_dtype(network)
    tag = cfg.stage.value

    if cfg.stage == Stage.MICLE:
        units: list = list(train_bags)
        builder = build_batch_micle
    else:
        units = image_items(train_bags)
        builder = build_batch_simclr
    batch_size = _effective_batch_size(cfg, len(units), "取樣單位")
    sampler = EpochSampler(units, batch_size, cfg.seed, tag)

    def loss_fn(epoch: int, batch_units: list) -> Tensor:
        batch = builder(batch_units, pipeline, epoch, cfg.seed, tag, processor, dtype)
        return nt_xent_loss(network.embed(batch.views), loss_cfg)

    logger.info("開始 %s：%d 步，批次 %d，%s lr=%.4g wd=%.2g τ=%.3g，預設 %s", tag, cfg.steps,
                batch_size, cfg.optimizer, cfg.lr, cfg.weight_decay, cfg.temperature, cfg.preset)
    initial_alignment = _alignment(network, manifest, processor)
    log = TrainLog(cfg.record_walltime)
    outcome = _run_loop(cfg, network, sampler, loss_fn, out_dir, log)
    final_alignment = _alignment(network, manifest, processor)
    if final_alignment is not None:
        log.append_eval(outcome.steps_run, {"alignment": final_alignment},
                        initial_alignment=initial_alignment)
    checkpoint, path = _finish(cfg, network, outcome, out_dir, log)
    losses = log.losses()
    if losses:
        logger.info("%s 完成：loss %.4f → %.4f", tag, losses[0], losses[-1])
    return StageResult(stage=cfg.stage, checkpoint=checkpoint, checkpoint_path=path,
                       network=network, log=log,
                       extra={"initial_alignment": initial_alignment,
                              "final_alignment": final_alignment})


def pretrain_simclr(cfg: StageConfig, manifest: Optional[Manifest] = None,
                    processor: Optional[BatchProcessor] = None) -> StageResult:
    """
    第一階段：SimCLR 預訓練（只用訓練切分的影像，忽略標籤）

    同一 bag 的每張影像都是獨立的取樣單位；正例對為同一影像的兩次增強。
    """
    if cfg.stage != Stage.SIMCLR:
        raise ConfigError(f"pretrain_simclr 收到 stage={cfg.stage.value} 的設定")
    manifest = _load_manifest(cfg, manifest)
    network = _pretrain_network(cfg)
    if cfg.init_checkpoint:
        restore_parameters(network, _load_init(cfg, PRETRAIN_INIT_STAGES))
    return _pretrain(cfg, network, manifest, processor)


def pretrain_micle(cfg: StageConfig, manifest: Optional[Manifest] = None,
                   processor: Optional[BatchProcessor] = None) -> StageResult:
    """
    第二階段：MICLe 預訓練

    正例對為同一 bag 中兩張不同的影像；只有一張影像的 bag 退化為 SimCLR 的兩次增強。
    權重由 simclr（或 micle）檢查點嚴格載入到依目前設定建立的網路。

    Raises:
        CheckpointError: 初始化檢查點的階段不符或參數形狀不符
    """
    if cfg.stage != Stage.MICLE:
        raise ConfigError(f"pretrain_micle 收到 stage={cfg.stage.value} 的設定")
    manifest = _load_manifest(cfg, manifest)
    network = _pretrain_network(cfg)
    if cfg.init_checkpoint:
        ckpt = _load_init(cfg, PRETRAIN_INIT_STAGES)
        restore_parameters(network, ckpt, strict=True)
        logger.info("由 %s（stage=%s, step=%d）初始化", cfg.init_checkpoint, ckpt.stage, ckpt.step)
    else:
        logger.warning("MICLe 由隨機初始化開始（stage.from_scratch）")
    return _pretrain(cfg, network, manifest, processor)


# ---------------------------------------------------------------------------
# 微調
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabeledItem:
    item: ImageItem
    label: Any


def labeled_items(bags: Sequence[Bag]) -> List[LabeledItem]:
    return [LabeledItem(item, bag.label)
            for bag in bags for item in image_items([bag])]


def finetune_network(cfg: StageConfig, manifest: Manifest) -> Tuple[Network, str]:
    """
    建立微調網路：random 或由檢查點載入編碼器，再接上新的分類頭

    Returns:
        (網路, 初始化來源的階段名稱)
    """
    encoder = build_encoder(cfg.encoder, cfg.init_seed)
    network = Network(encoder)
    init_stage = "random"
    if cfg.init_checkpoint and cfg.init_checkpoint != "random":
        ckpt = _load_init(cfg, FINETUNE_INIT_STAGES)
        restore_parameters(network, ckpt, strict=True)
        init_stage = ckpt.stage
        logger.info("編碼器由 %s（stage=%s）載入", cfg.init_checkpoint, ckpt.stage)
    return attach_classifier(network, manifest.task_kind, manifest.num_classes, cfg.init_seed), init_stage


def _label_array(labels: Sequence[Any], task_kind: TaskKind, dtype) -> np.ndarray:
    if task_kind == TaskKind.MULTILABEL:
        return np.asarray([list(label) for label in labels], dtype=dtype)
    return np.asarray(labels, dtype=np.int64)


def _validation_scorer(network: Network, manifest: Manifest, metric_name: str,
                       processor: Optional[BatchProcessor]) -> Optional[Callable[[int], Optional[float]]]:
    bags = manifest.split(Split.VALIDATION)
    if not bags:
        logger.warning("沒有驗證切分，改用最後一步的權重")
        return None
    metric_fn = get_metric(metric_name)

    def score(step: int) -> Optional[float]:
        preds = build_prediction_set(network, bags, manifest, processor)
        try:
            value = float(metric_fn(preds))
        except UndefinedMetricError as e:
            logger.warning("step %d 驗證指標 %s 無定義: %s", step, metric_name, e)
            return None
        logger.info("step %d 驗證 %s=%.4f", step, metric_name, value)
        return value

    return score


def _finetune_single(cfg: StageConfig, manifest: Manifest,
                     processor: Optional[BatchProcessor]) -> StageResult:
    out_dir = FileTools().ensure_dir(cfg.out_dir)
    network, init_stage = finetune_network(cfg, manifest)
    pipeline = _pipeline(cfg)
    dtype = _network_dtype(network)
    items = labeled_items(manifest.split(Split.TRAIN))
    batch_size = _effective_batch_size(cfg, len(items), "訓練影像")
    sampler = EpochSampler(items, batch_size, cfg.seed, cfg.stage.value)
    metric_name = cfg.selection_metric or selection_metric(manifest.task_kind)
    log = TrainLog(cfg.record_walltime)

    def render(task: Tuple[LabeledItem, int]) -> np.ndarray:
        unit, epoch = task
        seed = derive_sample_seed(cfg.seed, epoch, unit.item.bag_id, unit.item.image_index,
                                  cfg.stage.value)
        return pipeline.apply_array(decode_image(unit.item.ref).data, seed)

    def loss_fn(epoch: int, batch_units: List[LabeledItem]) -> Tensor:
        arrays = parallel_map(render, [(unit, epoch) for unit in batch_units], processor)
        logits = network.logits(Tensor(np.stack(arrays), dtype=dtype))
        labels = _label_array([unit.label for unit in batch_units], manifest.task_kind, dtype)
        return network.classifier.loss(logits, labels)

    scorer = _validation_scorer(network, manifest, metric_name, processor)

    def on_eval(step: int) -> Optional[float]:
        value = scorer(step)
        if value is not None:
            log.append_eval(step, {metric_name: value})
        return value

    logger.info("開始 finetune：init=%s，%d 張訓練影像，%d 步，批次 %d，%s lr=%.4g wd=%.2g",
                init_stage, len(items), cfg.steps, batch_size, cfg.optimizer, cfg.lr,
                cfg.weight_decay)
    outcome = _run_loop(cfg, network, sampler, loss_fn, out_dir, log,
                        on_eval if scorer is not None else None)
    if outcome.best_params is not None:
        for module in network.modules:
            module.load_arrays(outcome.best_params)
        logger.info("選用驗證 %s 最佳的 step %d（%.4f）", metric_name, outcome.best_step,
                    outcome.best_score)
    checkpoint, path = _finish(cfg, network, outcome, out_dir, log)
    return StageResult(stage=cfg.stage, checkpoint=checkpoint, checkpoint_path=path,
                       network=network, log=log, validation_score=outcome.best_score,
                       extra={"init": init_stage, "best_step": outcome.best_step,
                              "selection_metric": metric_name})


def _run_sweep(cfg: StageConfig, manifest: Manifest, processor: Optional[BatchProcessor],
               grid: Optional[SweepGrid], base_config: Optional[Dict[str, Any]]) -> StageResult:
    out_dir = FileTools().ensure_dir(cfg.out_dir)
    if base_config is not None:
        write_sweep_configs(base_config, out_dir, grid)
    points = build_sweep(grid)
    rows = []
    best: Optional[StageResult] = None
    best_index = -1
    for index, (lr, weight_decay) in enumerate(points):
        name = sweep_point_name(index, lr, weight_decay)
        point_cfg = replace(cfg, lr=float(lr), weight_decay=float(weight_decay), sweep=False,
                            out_dir=str(out_dir / "sweep" / name))
        logger.info("網格點 %d/%d：%s", index + 1, len(points), name)
        try:
            result = _finetune_single(point_cfg, manifest, processor)
            score = result.validation_score
        except DivergenceError as e:
            logger.warning("網格點 %s 發散: %s", name, e)
            result, score = None, None
        rows.append({"index": index, "name": name, "lr": lr, "weight_decay": weight_decay,
                     "validation_score": score if score is not None else float("nan"),
                     "diverged": result is None})
        if result is not None and (best is None or (score is not None and (
                best.validation_score is None or score > best.validation_score))):
            best, best_index = result, index
    frame = pd.DataFrame(rows)
    frame["selected"] = frame["index"] == best_index
    csv_text = frame.to_csv(index=False, lineterminator="\n")
    FileTools().write_bytes(out_dir / SWEEP_RESULTS_NAME, csv_text.encode("utf-8"))
    if best is None:
        raise ValidationError("所有網格點都發散，沒有可選的模型")
    logger.info("網格最佳點：%s（驗證 %s）", rows[best_index]["name"], best.validation_score)

    path = checkpoint_path(out_dir, cfg.stage)
    FileTools().write_bytes(path, best.checkpoint_path.read_bytes())
    best.checkpoint_path = path
    best.extra["sweep_winner"] = rows[best_index]["name"]
    best.extra["sweep_points"] = len(points)
    return best


def finetune(cfg: StageConfig, manifest: Optional[Manifest] = None,
             eval_config: Optional[EvalConfig] = None,
             processor: Optional[BatchProcessor] = None,
             grid: Optional[SweepGrid] = None,
             base_config: Optional[Dict[str, Any]] = None) -> StageResult:
    """
    第三階段：丟棄投影頭、接上分類頭並以動量 SGD 端到端微調

    Args:
        cfg: 微調設定；init_checkpoint 可為 simclr / micle / finetune 檢查點或省略（random）
        manifest: 已載入的清單（省略時由 cfg.manifest_path 載入）
        eval_config: 測試集評估設定；省略時使用預設值
        grid: cfg.sweep 為真時的超參數網格（預設 7×4 = 28 點）
        base_config: 執行設定字典；提供時為每個網格點寫出一份設定檔

    Returns:
        StageResult：report 為測試切分上的 MetricsReport（同時寫成 metrics.json）
    """
    if cfg.stage != Stage.FINETUNE:
        raise ConfigError(f"finetune 收到 stage={cfg.stage.value} 的設定")
    full = _load_manifest(cfg, manifest)
    if not full.split(Split.TRAIN):
        raise ValidationError("清單沒有訓練切分的 bag，無法微調")
    subset = subset_by_fraction(full, cfg.label_fraction, cfg.fraction_seed)
    if cfg.sweep:
        result = _run_sweep(cfg, subset, processor, grid, base_config)
    else:
        result = _finetune_single(cfg, subset, processor)

    eval_config = eval_config or EvalConfig()
    if full.split(Split.TEST):
        report = evaluate_network(result.network, full, Split.TEST, eval_config.metrics,
                                  eval_config.group_by, eval_config.bootstrap, cfg.seed,
                                  eval_config.repeats, processor)
        report.checkpoint = str(result.checkpoint_path)
        report.notes.update({"init": result.extra.get("init"), "label_fraction": cfg.label_fraction,
                             "selection_metric": result.extra.get("selection_metric"),
                             "validation_score": result.validation_score,
                             "best_step": result.extra.get("best_step"),
                             "sweep_winner": result.extra.get("sweep_winner")})
        report.save(Path(cfg.out_dir) / METRICS_NAME)
        result.report = report
    else:
        logger.warning("清單沒有測試切分，略過測試評估")
    return result


def run_stage(cfg: StageConfig, **kwargs) -> StageResult:
    """依 cfg.stage 分派"""
    if cfg.stage == Stage.SIMCLR:
        return pretrain_simclr(cfg, **kwargs)
    if cfg.stage == Stage.MICLE:
        return pretrain_micle(cfg, **kwargs)
    return finetune(cfg, **kwargs)


__all__ = [
    'StageResult',
    'checkpoint_path',
    'labeled_items',
    'finetune_network',
    'pretrain_simclr',
    'pretrain_micle',
    'finetune',
    'run_stage',
]
