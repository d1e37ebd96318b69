"""
訓練紀錄：每步的 step / lr / loss / 耗時，以及每次驗證的指標
"""

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import pandas as pd

from errors import ContractError
from tools.file_tools import FileTools

logger = logging.getLogger(__name__)

TRAIN_LOG_NAME = "train_log.csv"
EVAL_LOG_NAME = "eval_log.jsonl"
STEP_COLUMNS = ["step", "lr", "loss", "walltime_ms"]


@dataclass
class StepRecord:
    step: int
    lr: float
    loss: float
    walltime_ms: float


@dataclass
class EvalRecord:
    step: int
    metrics: Dict[str, float]
    extra: Dict[str, Any] = field(default_factory=dict)


class TrainLog:
    """
    只能附加的訓練紀錄；step 必須嚴格遞增

    Args:
        record_walltime: False 時耗時欄位一律寫 0，使紀錄可逐位元比較
    """

    def __init__(self, record_walltime: bool = True):
        self.record_walltime = record_walltime
        self.steps: List[StepRecord] = []
        self.evals: List[EvalRecord] = []
        self._started = time.perf_counter()

    @property
    def last_step(self) -> Optional[int]:
        return self.steps[-1].step if self.steps else None

    def append(self, step: int, lr: float, loss: float) -> StepRecord:
        """
        Raises:
            ContractError: step 未嚴格遞增
        """
        if self.steps and step <= self.steps[-1].step:
            raise ContractError(f"step 必須嚴格遞增：{self.steps[-1].step} → {step}")
        walltime = (time.perf_counter() - self._started) * 1000.0 if self.record_walltime else 0.0
        record = StepRecord(step=int(step), lr=float(lr), loss=float(loss), walltime_ms=walltime)
        self.steps.append(record)
        return record

    def append_eval(self, step: int, metrics: Dict[str, float], **extra: Any) -> EvalRecord:
        if self.evals and step <= self.evals[-1].step:
            raise ContractError(f"驗證紀錄的 step 必須嚴格遞增：{self.evals[-1].step} → {step}")
        record = EvalRecord(step=int(step), metrics=dict(metrics), extra=dict(extra))
        self.evals.append(record)
        return record

    def losses(self) -> List[float]:
        return [r.loss for r in self.steps]

    def all_finite(self) -> bool:
        return all(math.isfinite(r.loss) for r in self.steps)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.steps], columns=STEP_COLUMNS)

    def save(self, out_dir: Union[str, Path]) -> Path:
        """寫出 train_log.csv 與 eval_log.jsonl，回傳 CSV 路徑"""
        tools = FileTools()
        out_dir = tools.ensure_dir(out_dir)
        csv_path = out_dir / TRAIN_LOG_NAME
        csv_text = self.to_frame().to_csv(index=False, lineterminator="\n")
        tools.write_bytes(csv_path, csv_text.encode("utf-8"))
        if self.evals:
            tools.write_jsonl(out_dir / EVAL_LOG_NAME,
                              [{"step": r.step, "metrics": r.metrics, **r.extra} for r in self.evals])
        return csv_path


def read_train_log(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path)


__all__ = [
    'TRAIN_LOG_NAME',
    'EVAL_LOG_NAME',
    'StepRecord',
    'EvalRecord',
    'TrainLog',
    'read_train_log',
]
