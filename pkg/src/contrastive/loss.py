"""
NT-Xent 對比損失與暴力法驗證版本
"""

import math
from dataclasses import dataclass

import numpy as np

from autodiff import Tensor, ops
from errors import ConfigError, DimensionError


@dataclass(frozen=True)
class NTXentConfig:
    """
    Args:
        temperature: 溫度 τ（> 0）
        eps: 正規化時的零向量保護
    """
    temperature: float = 0.1
    eps: float = 1e-12

    def __post_init__(self):
        if not (isinstance(self.temperature, (int, float)) and math.isfinite(self.temperature)
                and self.temperature > 0):
            raise ConfigError(f"temperature 必須為正，收到 {self.temperature}")


def partner_indices(count: int) -> np.ndarray:
    """每個位置的正樣本位置：(0,1), (2,3), ..."""
    return np.arange(count) ^ 1


def _check_embeddings(shape) -> None:
    if len(shape) != 2 or shape[0] < 2 or shape[0] % 2 or shape[1] < 1:
        raise DimensionError(f"NT-Xent 需要 2N×d（N ≥ 1, d ≥ 1），收到 {tuple(shape)}")


def nt_xent_loss(z: Tensor, cfg: NTXentConfig) -> Tensor:
    """
    L = (1/2N) Σ_i [logsumexp_{k≠i}(sim(i,k)/τ) − sim(i, partner(i))/τ]

    sim 為餘弦相似度；log-sum-exp 先減去列最大值。

    Raises:
        DimensionError: 形狀不符
        NumericError: 輸入含 NaN / Inf
    """
    _check_embeddings(z.shape)
    ops.check_finite(z, "nt_xent_loss")
    count = z.shape[0]
    normalized = ops.l2_normalize(z, cfg.eps)
    logits = ops.scale(ops.matmul(normalized, ops.transpose(normalized)), 1.0 / cfg.temperature)
    mask = ~np.eye(count, dtype=bool)
    denominators = ops.logsumexp_rows(logits, mask)
    positives = ops.gather_cols(logits, partner_indices(count))
    return ops.mean(ops.sub(denominators, positives))


def nt_xent_oracle_terms(z: np.ndarray, cfg: NTXentConfig) -> np.ndarray:
    """逐位置的 ℓ(i, partner(i))，float64 雙重迴圈直接計算"""
    z = np.asarray(z, dtype=np.float64)
    _check_embeddings(z.shape)
    count = z.shape[0]
    norms = [max(math.sqrt(float(np.dot(row, row))), cfg.eps) for row in z]

    def sim(i: int, j: int) -> float:
        return float(np.dot(z[i], z[j])) / (norms[i] * norms[j])

    terms = np.empty(count)
    for i in range(count):
        j = i ^ 1
        denominator = sum(math.exp(sim(i, k) / cfg.temperature) for k in range(count) if k != i)
        terms[i] = -math.log(math.exp(sim(i, j) / cfg.temperature) / denominator)
    return terms


def nt_xent_oracle(z: np.ndarray, cfg: NTXentConfig) -> float:
    """(1/2N) Σ_k [ℓ(2k−1,2k) + ℓ(2k,2k−1)]，只供驗證使用"""
    return float(nt_xent_oracle_terms(z, cfg).sum() / np.asarray(z).shape[0])


__all__ = ['NTXentConfig', 'partner_indices', 'nt_xent_loss', 'nt_xent_oracle',
           'nt_xent_oracle_terms']
