"""
自我驗證套件（verify 子命令）

在同一個行程內以 numpy 執行：損失 oracle、梯度檢查、MICLe 取樣、損失不變性、
指標 oracle 與 bootstrap 性質；全部通過才回傳成功。
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
from rich.console import Console
from rich.table import Table

from autodiff import Tensor, ops
from autodiff.gradcheck import directional_gradient_error, max_gradient_error
from contrastive import NTXentConfig, micle_pair_indices, nt_xent_loss, nt_xent_oracle
from corpus import Bag, Split, TaskKind
from evaluation.bootstrap import bootstrap_ci
from evaluation.metrics import PredictionSet, get_metric, roc_auc, topk_accuracy, topk_sensitivity
from models import EncoderConfig, build_pretrain_network

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-4
F64 = np.float64


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


@dataclass
class VerificationSizes:
    """完整規模與 --quick 的縮小規模"""
    loss_batches: int = 1000
    gradient_configs: int = 100
    sampler_draws: int = 10000
    metric_cases: int = 10000
    coverage_trials: int = 100
    coverage_replicates: int = 1000

    @classmethod
    def quick(cls) -> "VerificationSizes":
        return cls(loss_batches=200, gradient_configs=10, sampler_draws=10000, metric_cases=1000,
                   coverage_trials=100, coverage_replicates=200)


def _param(rng: np.random.Generator, *shape: int, positive: bool = False) -> Tensor:
    values = rng.uniform(0.5, 2.0, shape) if positive else rng.standard_normal(shape)
    return Tensor(values, requires_grad=True, dtype=F64)


def _weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    return ops.sum(ops.mul(out, Tensor(weights, dtype=F64)))


# ---------------------------------------------------------------------------
# 1. 損失 oracle
# ---------------------------------------------------------------------------

def check_loss_oracle(sizes: VerificationSizes) -> Tuple[bool, str]:
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(sizes.loss_batches):
        n = int(rng.integers(2, 9))
        d = int(rng.integers(2, 17))
        tau = float(rng.choice([0.1, 0.5, 1.0]))
        z = rng.standard_normal((2 * n, d))
        cfg = NTXentConfig(temperature=tau)
        value = nt_xent_loss(Tensor(z, dtype=F64), cfg).item()
        worst = max(worst, abs(value - nt_xent_oracle(z, cfg)))
    return worst < 1e-10, f"{sizes.loss_batches} 批，最大差 {worst:.2e}"


# ---------------------------------------------------------------------------
# 2. 梯度檢查
# ---------------------------------------------------------------------------

def _case_matmul(rng):
    a, b = _param(rng, 3, 4), _param(rng, 4, 2)
    w = rng.standard_normal((3, 2))
    return (lambda: _weighted(ops.matmul(a, b), w)), [a, b]


def _case_elementwise(rng):
    a, b = _param(rng, 3, 4), _param(rng, 3, 4)
    w = rng.standard_normal((3, 4))
    return (lambda: _weighted(ops.add(ops.sub(ops.mul(a, b), ops.scale(a, 0.7)), b), w)), [a, b]


def _case_shape(rng):
    x, bias = _param(rng, 4, 6), _param(rng, 6)
    w = rng.standard_normal((4, 6))
    return (lambda: _weighted(ops.bias_add(ops.transpose(ops.reshape(x, (6, 4))), bias), w)), [x, bias]


def _case_exp_log(rng):
    x = _param(rng, 3, 3, positive=True)
    w = rng.standard_normal((3, 3))
    return (lambda: ops.add(_weighted(ops.log(x), w), ops.mean(ops.exp(ops.scale(x, 0.5))))), [x]


def _case_logsumexp(rng):
    x = _param(rng, 4, 5)
    mask = rng.random((4, 5)) < 0.7
    mask[np.arange(4), rng.integers(0, 5, 4)] = True
    cols = rng.integers(0, 5, 4)
    w = rng.standard_normal(4)
    return (lambda: _weighted(ops.sub(ops.logsumexp_rows(x, mask), ops.gather_cols(x, cols)),
                              w)), [x]


def _case_normalize(rng):
    x = _param(rng, 4, 3)
    w = rng.standard_normal((4, 3))
    return (lambda: _weighted(ops.l2_normalize(x), w)), [x]


def _case_losses(rng):
    logits = _param(rng, 5, 3)
    labels = rng.integers(0, 3, 5)
    targets = (rng.random((5, 3)) < 0.5).astype(F64)
    return (lambda: ops.add(ops.softmax_cross_entropy(logits, labels),
                            ops.sigmoid_bce(logits, targets))), [logits]


def _case_conv(rng):
    stride, padding = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    x, w, b = _param(rng, 2, 2, 5, 5), _param(rng, 3, 2, 3, 3), _param(rng, 3)
    probe = ops.conv2d(Tensor(x.data), Tensor(w.data), stride, padding)
    weights = rng.standard_normal(probe.shape)
    return (lambda: _weighted(ops.conv2d(x, w, stride, padding, b), weights)), [x, w, b]


def _case_pool(rng):
    x = _param(rng, 2, 2, 4, 4)
    weights = rng.standard_normal((2, 2))
    return (lambda: _weighted(ops.global_avg_pool(ops.relu(ops.maxpool2d(x, 2))), weights)), [x]


def _case_nt_xent(rng):
    config = EncoderConfig(widths=(4,), blocks_per_stage=(1,), input_size=(4, 4), in_channels=2)
    network = build_pretrain_network(config, int(rng.integers(0, 2**31)), projection_dim=4,
                                     dtype=F64)
    views = Tensor(rng.random((4, 2, 4, 4)), dtype=F64)
    cfg = NTXentConfig(temperature=float(rng.choice([0.1, 0.5, 1.0])))
    params = list(network.parameters().values())
    return (lambda: nt_xent_loss(network.embed(views), cfg)), params


SMOOTH_CASES = {
    "matmul": _case_matmul,
    "add/sub/mul/scale": _case_elementwise,
    "reshape/transpose/bias_add": _case_shape,
    "exp/log/mean": _case_exp_log,
    "logsumexp_rows/gather_cols": _case_logsumexp,
    "l2_normalize": _case_normalize,
    "softmax_ce/sigmoid_bce": _case_losses,
    "conv2d": _case_conv,
}
KINKED_CASES = {
    "maxpool/relu/global_avg_pool": _case_pool,
    "nt_xent∘encoder": _case_nt_xent,
}


def _kinked_error(builder, rng: np.random.Generator, attempts: int = 8) -> float:
    for _ in range(attempts):
        fn, inputs = builder(rng)
        error = directional_gradient_error(fn, inputs, rng)
        if error is not None:
            return error
    return 0.0


def check_gradients(sizes: VerificationSizes) -> Tuple[bool, str]:
    rng = np.random.default_rng(2)
    worst: List[Tuple[float, str]] = []
    for name, builder in SMOOTH_CASES.items():
        errors = [max_gradient_error(*builder(rng)) for _ in range(sizes.gradient_configs)]
        worst.append((max(errors), name))
    for name, builder in KINKED_CASES.items():
        errors = [_kinked_error(builder, rng) for _ in range(sizes.gradient_configs)]
        worst.append((max(errors), name))
    error, name = max(worst)
    return error < GRADIENT_TOLERANCE, f"{len(worst)} 組 × {sizes.gradient_configs}，最大 {error:.1e}（{name}）"


# ---------------------------------------------------------------------------
# 3. MICLe 取樣
# ---------------------------------------------------------------------------

def _bag(bag_id: str, m: int) -> Bag:
    return Bag(bag_id=bag_id, image_refs=tuple(f"{bag_id}_{i}" for i in range(m)), label=0,
               split=Split.TRAIN, group=None)


def check_micle_sampler(sizes: VerificationSizes) -> Tuple[bool, str]:
    single = _bag("single", 1)
    if any(micle_pair_indices(single, epoch, 7) != (0, 0) for epoch in range(50)):
        return False, "M=1 未回傳同一張影像"
    for m in (2, 4, 6):
        bag = _bag(f"m{m}", m)
        for epoch in range(200):
            first, second = micle_pair_indices(bag, epoch, 7)
            if first == second or not (0 <= first < m and 0 <= second < m):
                return False, f"M={m} 抽出不合法的影像對 ({first}, {second})"
    bag = _bag("triple", 3)
    counts = {}
    for epoch in range(sizes.sampler_draws):
        pair = tuple(sorted(micle_pair_indices(bag, epoch, 11)))
        counts[pair] = counts.get(pair, 0) + 1
    freqs = [counts.get(p, 0) / sizes.sampler_draws for p in ((0, 1), (0, 2), (1, 2))]
    deviation = max(abs(f - 1 / 3) for f in freqs)
    return deviation <= 0.02, f"M=3 無序對頻率 {', '.join(f'{f:.3f}' for f in freqs)}"


# ---------------------------------------------------------------------------
# 4. 損失不變性
# ---------------------------------------------------------------------------

def check_loss_invariants(sizes: VerificationSizes) -> Tuple[bool, str]:
    rng = np.random.default_rng(4)
    cfg = NTXentConfig(temperature=0.5)
    for _ in range(50):
        n = int(rng.integers(2, 7))
        z = rng.standard_normal((2 * n, 8))
        base = nt_xent_loss(Tensor(z, dtype=F64), cfg).item()
        if base < 0:
            return False, f"損失為負 {base}"
        order = rng.permutation(n)
        permuted = z.reshape(n, 2, 8)[order].reshape(2 * n, 8)
        swapped = z.reshape(n, 2, 8)[:, ::-1].reshape(2 * n, 8)
        for variant, label in ((permuted, "成對置換"), (swapped, "對內交換")):
            value = nt_xent_loss(Tensor(variant, dtype=F64), cfg).item()
            if abs(value - base) > 1e-12:
                return False, f"{label}改變損失 {abs(value - base):.1e}"
        scales = rng.uniform(0.1, 10.0, (2 * n, 1))
        z32 = z.astype(np.float32)
        a = nt_xent_loss(Tensor(z32, dtype=np.float32), cfg).item()
        b = nt_xent_loss(Tensor((z32 * scales.astype(np.float32)), dtype=np.float32), cfg).item()
        if abs(a - b) > 1e-6 * max(1.0, abs(a)):
            return False, f"正向縮放改變損失 {abs(a - b):.1e}"
    single = nt_xent_loss(Tensor(rng.standard_normal((2, 5)), dtype=F64), cfg).item()
    if single != 0.0:
        return False, f"N=1 損失 {single} ≠ 0"
    return True, "非負、置換、交換、縮放、N=1"


# ---------------------------------------------------------------------------
# 5. 指標 oracle
# ---------------------------------------------------------------------------

def brute_force_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return float(wins / (len(pos) * len(neg)))


def check_metric_oracles(sizes: VerificationSizes) -> Tuple[bool, str]:
    rng = np.random.default_rng(5)
    for case in range(sizes.metric_cases):
        n = int(rng.integers(2, 101))
        labels = rng.integers(0, 2, n)
        labels[0], labels[1] = 0, 1
        scores = rng.integers(0, 25, n) / 8.0 if case % 2 else rng.random(n)
        if abs(roc_auc(scores, labels) - brute_force_auc(scores, labels)) > 1e-12:
            return False, f"第 {case} 例 AUC 與逐對計數不符"
        if abs(roc_auc(np.exp(3.0 * scores) + 1.0, labels) - roc_auc(scores, labels)) > 1e-12:
            return False, f"第 {case} 例 AUC 在單調轉換下改變"
    # 真實類別分別排第 1、3、4 名
    scores = np.array([[0.9, 0.05, 0.03, 0.02], [0.5, 0.3, 0.15, 0.05], [0.4, 0.3, 0.2, 0.1]])
    preds = PredictionSet(bag_ids=["a", "b", "c"], scores=scores, labels=np.array([0, 2, 3]))
    if abs(topk_accuracy(preds, 3) - 2 / 3) > 1e-15:
        return False, "top-3 準確率 fixture 不符"
    two = PredictionSet(bag_ids=[str(i) for i in range(5)],
                        scores=np.array([[1.0, 0.0]] * 5),
                        labels=np.array([0, 0, 0, 0, 1]))
    if topk_sensitivity(two, 1).average != 0.5:
        return False, "top-1 敏感度 fixture 不符"
    return True, f"{sizes.metric_cases} 例 AUC 與逐對計數一致；top-k fixture 通過"


# ---------------------------------------------------------------------------
# 6. bootstrap
# ---------------------------------------------------------------------------

def _bernoulli_predictions(rng: np.random.Generator, n: int, p: float) -> PredictionSet:
    correct = rng.random(n) < p
    labels = rng.integers(0, 2, n)
    predicted = np.where(correct, labels, 1 - labels)
    scores = np.stack([predicted == 0, predicted == 1], axis=1).astype(F64)
    return PredictionSet(bag_ids=[str(i) for i in range(n)], scores=scores, labels=labels,
                         task_kind=TaskKind.MULTICLASS)


def check_bootstrap(sizes: VerificationSizes) -> Tuple[bool, str]:
    rng = np.random.default_rng(6)
    top1 = get_metric("top1")
    preds = _bernoulli_predictions(rng, 200, 0.7)
    first = bootstrap_ci(preds, top1, sizes.coverage_replicates, seed=3)
    second = bootstrap_ci(preds, top1, sizes.coverage_replicates, seed=3)
    if first != second:
        return False, "相同種子產生不同區間"
    perfect = _bernoulli_predictions(rng, 50, 1.0)
    flat = bootstrap_ci(perfect, top1, 200, seed=0)
    if not flat.ci_low == flat.point == flat.ci_high:
        return False, "退化輸入的區間寬度不為 0"
    covered = 0
    for trial in range(sizes.coverage_trials):
        result = bootstrap_ci(_bernoulli_predictions(rng, 200, 0.7), top1,
                              sizes.coverage_replicates, seed=trial)
        covered += result.ci_low <= 0.7 <= result.ci_high
    return covered >= 0.9 * sizes.coverage_trials, f"涵蓋率 {covered}/{sizes.coverage_trials}"


CHECKS: List[Tuple[str, Callable[[VerificationSizes], Tuple[bool, str]]]] = [
    ("loss oracle", check_loss_oracle),
    ("gradient suite", check_gradients),
    ("MICLe sampler", check_micle_sampler),
    ("loss invariants", check_loss_invariants),
    ("metric oracles", check_metric_oracles),
    ("bootstrap", check_bootstrap),
]


def run_verification(quick: bool = False, only: Optional[List[str]] = None) -> List[CheckResult]:
    sizes = VerificationSizes.quick() if quick else VerificationSizes()
    results = []
    for name, check in CHECKS:
        if only and name not in only:
            continue
        started = time.perf_counter()
        try:
            passed, detail = check(sizes)
        except Exception as e:
            logger.exception("檢查 %s 發生例外", name)
            passed, detail = False, f"{type(e).__name__}: {e}"
        elapsed = time.perf_counter() - started
        logger.info("%s：%s（%.1fs）", name, "通過" if passed else "失敗", elapsed)
        results.append(CheckResult(name=name, passed=passed, detail=detail, seconds=elapsed))
    return results


def render_results(results: List[CheckResult], console: Optional[Console] = None) -> None:
    table = Table(title="verify")
    table.add_column("check", style="cyan")
    table.add_column("result")
    table.add_column("time", justify="right")
    table.add_column("detail")
    for result in results:
        table.add_row(result.name, "[green]PASS[/green]" if result.passed else "[red]FAIL[/red]",
                      f"{result.seconds:.1f}s", result.detail)
    (console or Console()).print(table)


__all__ = [
    'CheckResult',
    'VerificationSizes',
    'CHECKS',
    'brute_force_auc',
    'run_verification',
    'render_results',
]
