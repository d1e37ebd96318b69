"""
圖表工具
標籤效率曲線、子群指標長條圖與訓練損失曲線（PNG）
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import pandas as pd

# 可選依賴檢查
try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    HAS_MATPLOTLIB = True
except ImportError:
    HAS_MATPLOTLIB = False

logger = logging.getLogger(__name__)


class DataVisualizer:
    """把評估與訓練輸出畫成圖"""

    def __init__(self, dpi: int = 120):
        self.dpi = dpi

    def check_dependencies(self) -> Dict[str, bool]:
        return {'matplotlib': HAS_MATPLOTLIB}

    def _save(self, fig, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.tight_layout()
        fig.savefig(path, dpi=self.dpi)
        plt.close(fig)
        logger.info("寫出圖表 %s", path)
        return path

    def label_efficiency(self, curve: pd.DataFrame, metric: str,
                         path: Union[str, Path]) -> Optional[Path]:
        """每個初始化一條線：x 為標籤比例，y 為跨種子平均，誤差棒為標準差"""
        if not HAS_MATPLOTLIB:
            logger.warning("matplotlib 未安裝，略過標籤效率圖")
            return None
        selected = curve[curve["metric"] == metric]
        if selected.empty:
            return None
        stats = selected.groupby(["init", "fraction"])["value"].agg(["mean", "std"]).reset_index()
        fig, ax = plt.subplots(figsize=(6, 4))
        for init, group in stats.groupby("init", sort=False):
            ax.errorbar(group["fraction"], group["mean"], yerr=group["std"].fillna(0.0),
                        marker="o", capsize=3, label=init)
        ax.set_xlabel("label fraction")
        ax.set_ylabel(metric)
        ax.set_title(f"label efficiency ({metric})")
        ax.grid(alpha=0.3)
        ax.legend()
        return self._save(fig, path)

    def subgroups(self, report: Dict[str, Any], metric: str,
                  path: Union[str, Path]) -> Optional[Path]:
        """單一指標的各子群點估計與 95% 區間"""
        if not HAS_MATPLOTLIB:
            logger.warning("matplotlib 未安裝，略過子群圖")
            return None
        entry = report["metrics"].get(metric) or {}
        per_group = {k: v for k, v in (entry.get("per_group") or {}).items() if v is not None}
        if not per_group:
            return None
        names = sorted(per_group)
        points = [per_group[n]["point"] for n in names]
        lower = [per_group[n]["point"] - per_group[n]["ci_low"] for n in names]
        upper = [per_group[n]["ci_high"] - per_group[n]["point"] for n in names]
        fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(names)), 4))
        ax.bar(range(len(names)), points, yerr=[lower, upper], capsize=4, alpha=0.8)
        ax.axhline(entry["point"], color="black", linestyle="--", linewidth=1, label="overall")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=45)
        ax.set_ylabel(metric)
        ax.set_title(f"{metric} by group")
        ax.legend()
        return self._save(fig, path)

    def train_loss(self, frame: pd.DataFrame, path: Union[str, Path]) -> Optional[Path]:
        if not HAS_MATPLOTLIB or frame.empty:
            return None
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(frame["step"], frame["loss"], linewidth=1)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.grid(alpha=0.3)
        return self._save(fig, path)


# 創建預設實例
default_visualizer = DataVisualizer()


def plot_label_efficiency(curve: pd.DataFrame, metric: str,
                          path: Union[str, Path]) -> Optional[Path]:
    return default_visualizer.label_efficiency(curve, metric, path)


def plot_subgroups(report: Dict[str, Any], metric: str, path: Union[str, Path]) -> Optional[Path]:
    return default_visualizer.subgroups(report, metric, path)


def plot_train_loss(frame: pd.DataFrame, path: Union[str, Path]) -> Optional[Path]:
    return default_visualizer.train_loss(frame, path)


__all__ = [
    'HAS_MATPLOTLIB',
    'DataVisualizer',
    'default_visualizer',
    'plot_label_efficiency',
    'plot_subgroups',
    'plot_train_loss',
]
