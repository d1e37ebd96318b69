"""
標籤效率曲線：每個 (初始化, 標籤比例, 種子) 微調一次並在測試切分評估
"""

import copy
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import pandas as pd
from scipy.stats import spearmanr

from corpus import Manifest, load_manifest
from errors import ConfigError
from tools.batch_processor import BatchProcessor
from tools.file_tools import FileTools, write_json
from .metrics import selection_metric

logger = logging.getLogger(__name__)

DEFAULT_FRACTIONS = tuple(round(0.1 * i, 1) for i in range(1, 11))
CURVE_COLUMNS = ["init", "fraction", "seed", "metric", "value"]
CURVE_NAME = "label_efficiency.csv"
SUMMARY_NAME = "label_efficiency_summary.json"


@dataclass
class LabelEfficiencyResult:
    curve: pd.DataFrame
    spearman: Dict[str, Optional[float]]
    metric: str
    csv_path: Path
    plot_path: Optional[Path] = None


def parse_inits(text: str) -> Dict[str, Optional[str]]:
    """
    解析 "random,simclr=runs/s/simclr.mck,micle=runs/m/micle.mck"

    不帶路徑的項目只允許 random。
    """
    inits: Dict[str, Optional[str]] = {}
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        name, _, path = part.partition("=")
        name = name.strip()
        if not path:
            if name != "random":
                raise ConfigError(f"初始化 {name} 缺少檢查點路徑（格式 name=path）")
            inits[name] = None
        else:
            inits[name] = path.strip()
    if not inits:
        raise ConfigError("至少需要一個初始化")
    return inits


def check_fractions(fractions: Sequence[float]) -> List[float]:
    values = [float(f) for f in fractions]
    bad = [f for f in values if not 0 < f <= 1]
    if bad or not values:
        raise ConfigError(f"標籤比例必須在 (0, 1]：{bad or values}")
    return values


def spearman(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Spearman 等級相關；任一序列為常數時回傳 None"""
    x, y = list(x), list(y)
    if len(set(x)) < 2 or len(set(y)) < 2:
        return None
    value, _ = spearmanr(x, y)
    return None if math.isnan(value) else float(value)


def curve_trend(curve: pd.DataFrame, metric: str) -> Dict[str, Optional[float]]:
    """每個初始化：各比例的跨種子平均，與比例之間的 Spearman 相關"""
    selected = curve[curve["metric"] == metric]
    means = selected.groupby(["init", "fraction"], sort=True)["value"].mean().reset_index()
    result: Dict[str, Optional[float]] = {}
    for init, group in means.groupby("init", sort=False):
        result[init] = spearman(group["fraction"], group["value"]) if len(group) >= 2 else None
    return result


def run_dir_name(init: str, fraction: float, seed: int) -> str:
    return f"{init}/f{fraction:.2f}_s{seed}"


def label_efficiency_sweep(init_ckpts: Dict[str, Optional[str]], fractions: Sequence[float],
                           seeds: Sequence[int], run_config,
                           manifest: Optional[Manifest] = None,
                           out_dir: Optional[Union[str, Path]] = None,
                           processor: Optional[BatchProcessor] = None,
                           plot: bool = True) -> LabelEfficiencyResult:
    """
    標籤效率掃描

    Args:
        init_ckpts: 初始化名稱 → 檢查點路徑（random 為 None）
        fractions: 標籤比例，皆在 (0, 1]
        seeds: 微調種子；每個種子也決定標籤子集
        run_config: 微調使用的 RunConfig
        out_dir: 輸出目錄（預設為 run_config.out_dir）

    Returns:
        LabelEfficiencyResult：長格式曲線表（init, fraction, seed, metric, value）
    """
    from training.config import Stage, resolve_stage
    from training.stages import finetune

    fractions = check_fractions(fractions)
    if not seeds:
        raise ConfigError("至少需要一個種子")
    manifest = manifest if manifest is not None else load_manifest(run_config.data.manifest)
    out_dir = FileTools().ensure_dir(out_dir or run_config.out_dir)

    rows = []
    total = len(init_ckpts) * len(fractions) * len(seeds)
    done = 0
    for init, ckpt in init_ckpts.items():
        for fraction in fractions:
            for seed in seeds:
                done += 1
                point = copy.deepcopy(run_config)
                point.seed = int(seed)
                point.data.label_fraction = fraction
                point.stage.init_checkpoint = ckpt
                point.stage.sweep = False
                point.out_dir = str(out_dir / run_dir_name(init, fraction, seed))
                cfg = resolve_stage(point, Stage.FINETUNE, manifest.task_kind, manifest.image_size)
                logger.info("標籤效率 %d/%d：init=%s fraction=%.2f seed=%d", done, total, init,
                            fraction, seed)
                result = finetune(cfg, manifest, point.eval, processor)
                if result.report is None:
                    continue
                for name, entry in result.report.metrics.items():
                    rows.append({"init": init, "fraction": fraction, "seed": int(seed),
                                 "metric": name, "value": entry.point})

    curve = pd.DataFrame(rows, columns=CURVE_COLUMNS)
    csv_path = out_dir / CURVE_NAME
    FileTools().write_bytes(csv_path, curve.to_csv(index=False, lineterminator="\n").encode("utf-8"))
    metric = selection_metric(manifest.task_kind)
    trend = curve_trend(curve, metric)
    write_json(out_dir / SUMMARY_NAME, {"metric": metric, "spearman": trend,
                                        "fractions": fractions, "seeds": [int(s) for s in seeds]})
    for init, value in trend.items():
        logger.info("%s：比例與 %s 的 Spearman = %s", init, metric,
                    "n/a" if value is None else f"{value:.3f}")

    plot_path = None
    if plot:
        from tools.data_visualizer import plot_label_efficiency
        plot_path = plot_label_efficiency(curve, metric, out_dir / "label_efficiency.png")
    return LabelEfficiencyResult(curve=curve, spearman=trend, metric=metric, csv_path=csv_path,
                                 plot_path=plot_path)


__all__ = [
    'DEFAULT_FRACTIONS',
    'CURVE_COLUMNS',
    'LabelEfficiencyResult',
    'parse_inits',
    'check_fractions',
    'spearman',
    'curve_trend',
    'label_efficiency_sweep',
]
