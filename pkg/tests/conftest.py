"""
測試共用設定與 fixture
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# 與 main.py 相同：src 目錄加入模組搜尋路徑
SRC_DIR = Path(__file__).resolve().parent.parent / "src"
if str(SRC_DIR) not in sys.path:
    sys.path.insert(0, str(SRC_DIR))

from autodiff import set_default_dtype  # noqa: E402
from corpus import SyntheticCorpusSpec, generate_synthetic_corpus  # noqa: E402
from run_config import RunConfig  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="執行較慢的端到端測試")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: 較慢的端到端測試（需要 --runslow）")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="需要 --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def float64_default():
    """每個測試都從 float64 預設型別開始"""
    set_default_dtype(np.float64)
    yield
    set_default_dtype(np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_CORPUS = {
    "num_classes": 3,
    "bags_per_class": 10,
    "views_per_bag_range": [1, 3],
    "image_size": [16, 16],
    "seed": 7,
}


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """3 類 × 10 bag、16×16 影像的合成資料集（每類 6 訓練 / 2 驗證 / 2 測試）"""
    out_dir = tmp_path_factory.mktemp("corpus")
    spec = SyntheticCorpusSpec.from_dict(dict(TINY_CORPUS))
    return generate_synthetic_corpus(spec, out_dir)


@pytest.fixture(scope="session")
def tiny_multilabel_corpus(tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("corpus_ml")
    spec = SyntheticCorpusSpec.from_dict(dict(TINY_CORPUS, task_kind="multilabel"))
    return generate_synthetic_corpus(spec, out_dir)


def tiny_run_config(manifest_path, out_dir, **stage) -> RunConfig:
    """小型網路與少量步數的執行設定"""
    data = {
        "data": {"manifest": str(manifest_path)},
        "model": {"widths": [4, 8], "blocks_per_stage": [1, 1], "projection_dim": 8},
        "stage": dict({"steps": 3, "batch_size": 4, "log_every": 0, "record_walltime": False},
                      **stage),
        "eval": {"bootstrap": 20},
        "seed": 11,
        "out_dir": str(out_dir),
    }
    return RunConfig.from_dict(data)


@pytest.fixture
def run_config_factory(tiny_corpus, tmp_path):
    def build(out_name: str = "run", **stage) -> RunConfig:
        return tiny_run_config(tiny_corpus.source_path, tmp_path / out_name, **stage)
    return build
