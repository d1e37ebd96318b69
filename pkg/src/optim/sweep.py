"""
超參數網格：微調的學習率 × 權重衰減
"""

import copy
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from tools.file_tools import write_json

logger = logging.getLogger(__name__)


def _default_learning_rates() -> Tuple[float, ...]:
    return tuple(float(v) for v in np.logspace(-3.5, -0.5, 7))


def _default_weight_decays() -> Tuple[float, ...]:
    return tuple(float(v) for v in np.logspace(-5, -3, 3)) + (0.0,)


@dataclass(frozen=True)
class SweepGrid:
    """7 個對數等距學習率 × 4 個權重衰減（含 0）"""
    learning_rates: Tuple[float, ...] = field(default_factory=_default_learning_rates)
    weight_decays: Tuple[float, ...] = field(default_factory=_default_weight_decays)


def build_sweep(grid: Optional[SweepGrid] = None) -> List[Tuple[float, float]]:
    """回傳 (lr, wd) 組合，學習率為外層"""
    grid = grid or SweepGrid()
    return list(itertools.product(grid.learning_rates, grid.weight_decays))


def sweep_point_name(index: int, lr: float, weight_decay: float) -> str:
    return f"{index:02d}_lr{lr:.3g}_wd{weight_decay:.0e}"


def write_sweep_configs(base_config: Dict[str, Any], out_dir: Union[str, Path],
                        grid: Optional[SweepGrid] = None) -> List[Path]:
    """
    每個網格點寫出一份設定檔：out_dir/sweep/<index>_lr<lr>_wd<wd>/config.json

    每份設定的 optim.lr / optim.weight_decay 改為該點的值，out_dir 指向該點目錄。
    """
    paths = []
    root = Path(out_dir) / "sweep"
    for index, (lr, weight_decay) in enumerate(build_sweep(grid)):
        point_dir = root / sweep_point_name(index, lr, weight_decay)
        config = copy.deepcopy(base_config)
        config.setdefault("optim", {})
        config["optim"]["lr"] = lr
        config["optim"]["weight_decay"] = weight_decay
        config["out_dir"] = str(point_dir)
        paths.append(write_json(point_dir / "config.json", config))
    logger.info("寫出 %d 份網格設定至 %s", len(paths), root)
    return paths


__all__ = ['SweepGrid', 'build_sweep', 'sweep_point_name',
           'write_sweep_configs']
