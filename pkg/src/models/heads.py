"""
投影頭 g(·)、分類頭與完整網路
"""

import logging
import math
from collections import OrderedDict
from typing import Any, Dict, Optional, Sequence

import numpy as np

from autodiff import Tensor, no_grad, ops
from corpus.manifest import TaskKind
from errors import ConfigError, DimensionError
from .encoder import Encoder, EncoderConfig, Module, build_encoder, he_uniform

logger = logging.getLogger(__name__)


class ProjectionHead(Module):
    """兩層投影頭 z = relu(h·W₁)·W₂（無偏差、輸出不正規化）"""

    def __init__(self, input_dim: int, hidden_dim: Optional[int] = None, output_dim: int = 128,
                 init_seed: int = 0, dtype=None):
        super().__init__()
        if output_dim <= 0 or input_dim <= 0:
            raise ConfigError("投影頭維度必須為正")
        self.input_dim = int(input_dim)
        self.hidden_dim = int(hidden_dim or input_dim)
        self.output_dim = int(output_dim)
        rng = np.random.default_rng(int(init_seed) + 1)
        self.register("projection.layer1.weight",
                      he_uniform(rng, (self.input_dim, self.hidden_dim), self.input_dim, dtype))
        self.register("projection.layer2.weight",
                      he_uniform(rng, (self.hidden_dim, self.output_dim), self.hidden_dim, dtype))

    def forward(self, h: Tensor) -> Tensor:
        if h.ndim != 2 or h.shape[1] != self.input_dim:
            raise DimensionError(f"投影頭需要 N×{self.input_dim}，收到 {h.shape}")
        hidden = ops.relu(ops.matmul(h, self._params["projection.layer1.weight"]))
        return ops.matmul(hidden, self._params["projection.layer2.weight"])

    __call__ = forward

    def describe(self) -> Dict[str, Any]:
        return {"input_dim": self.input_dim, "hidden_dim": self.hidden_dim,
                "output_dim": self.output_dim}


class Classifier(Module):
    """單一仿射層 D → num_classes"""

    def __init__(self, input_dim: int, num_classes: int, task_kind: TaskKind,
                 init_seed: int = 0, dtype=None):
        super().__init__()
        if num_classes < 2:
            raise ConfigError(f"num_classes 必須 ≥ 2，收到 {num_classes}")
        self.input_dim = int(input_dim)
        self.num_classes = int(num_classes)
        self.task_kind = task_kind
        rng = np.random.default_rng(int(init_seed) + 2)
        bound = 1.0 / math.sqrt(self.input_dim)
        self.register("classifier.weight",
                      Tensor(rng.uniform(-bound, bound, (self.input_dim, self.num_classes)),
                             requires_grad=True, dtype=dtype))
        self.register("classifier.bias",
                      Tensor(np.zeros(self.num_classes), requires_grad=True, dtype=dtype))

    def forward(self, h: Tensor) -> Tensor:
        return ops.bias_add(ops.matmul(h, self._params["classifier.weight"]),
                            self._params["classifier.bias"])

    __call__ = forward

    def loss(self, logits: Tensor, labels: np.ndarray) -> Tensor:
        """單標籤用 softmax 交叉熵，多標籤用逐類別 sigmoid 二元交叉熵"""
        if self.task_kind == TaskKind.MULTICLASS:
            return ops.softmax_cross_entropy(logits, labels)
        return ops.sigmoid_bce(logits, labels)

    def probabilities(self, logits: np.ndarray) -> np.ndarray:
        if self.task_kind == TaskKind.MULTICLASS:
            return ops.softmax_probabilities(logits)
        return ops.sigmoid_probabilities(logits)

    def describe(self) -> Dict[str, Any]:
        return {"input_dim": self.input_dim, "num_classes": self.num_classes,
                "task_kind": self.task_kind.value}


class Network:
    """編碼器加上投影頭或分類頭（兩者互斥）"""

    def __init__(self, encoder: Encoder, projection: Optional[ProjectionHead] = None,
                 classifier: Optional[Classifier] = None):
        if projection is not None and classifier is not None:
            raise ConfigError("網路只能帶投影頭或分類頭其中之一")
        self.encoder = encoder
        self.projection = projection
        self.classifier = classifier

    @property
    def modules(self) -> Sequence[Module]:
        return [m for m in (self.encoder, self.projection, self.classifier) if m is not None]

    def parameters(self) -> "OrderedDict[str, Tensor]":
        params: "OrderedDict[str, Tensor]" = OrderedDict()
        for module in self.modules:
            params.update(module.parameters())
        return params

    def parameter_count(self) -> int:
        return sum(m.parameter_count() for m in self.modules)

    def zero_grad(self) -> None:
        for module in self.modules:
            module.zero_grad()

    def astype(self, dtype) -> "Network":
        for module in self.modules:
            module.astype(dtype)
        return self

    def features(self, x: Tensor) -> Tensor:
        return self.encoder(x)

    def embed(self, x: Tensor) -> Tensor:
        """對比學習用嵌入 z = g(f(x))"""
        if self.projection is None:
            raise ConfigError("此網路沒有投影頭")
        return project(self.projection, self.encoder(x))

    def logits(self, x: Tensor) -> Tensor:
        if self.classifier is None:
            raise ConfigError("此網路沒有分類頭")
        return self.classifier(self.encoder(x))

    def predict_proba(self, x: Tensor) -> np.ndarray:
        """推論：不建立計算圖，回傳機率"""
        with no_grad():
            logits = self.logits(x)
        return self.classifier.probabilities(logits.data)

    def describe(self) -> Dict[str, Any]:
        return {
            "encoder": self.encoder.config.to_dict(),
            "projection": self.projection.describe() if self.projection else None,
            "classifier": self.classifier.describe() if self.classifier else None,
        }


def project(head: ProjectionHead, h: Tensor) -> Tensor:
    """z = W₂·relu(W₁·h)"""
    return head(h)


def build_pretrain_network(config: EncoderConfig, init_seed: int = 0, projection_dim: int = 128,
                           dtype=None) -> Network:
    encoder = build_encoder(config, init_seed, dtype)
    head = ProjectionHead(encoder.feature_dim, output_dim=projection_dim, init_seed=init_seed,
                          dtype=dtype)
    return Network(encoder, projection=head)


def attach_classifier(network: Network, task_kind: TaskKind, num_classes: int,
                      init_seed: int = 0) -> Network:
    """
    丟棄投影頭並在 h 上接一層分類頭

    Raises:
        ConfigError: num_classes < 2
    """
    dtype = next(iter(network.encoder.parameters().values())).dtype
    classifier = Classifier(network.encoder.feature_dim, num_classes, task_kind, init_seed, dtype)
    logger.debug("接上分類頭：%s，%d 類", task_kind.value, num_classes)
    return Network(network.encoder, classifier=classifier)


def network_from_description(description: Dict[str, Any], init_seed: int = 0) -> Network:
    """依 describe() 的內容重建網路骨架（參數稍後由檢查點覆寫）"""
    encoder = build_encoder(EncoderConfig.from_dict(description["encoder"]), init_seed)
    projection = classifier = None
    if description.get("projection"):
        spec = description["projection"]
        projection = ProjectionHead(spec["input_dim"], spec["hidden_dim"], spec["output_dim"],
                                    init_seed)
    if description.get("classifier"):
        spec = description["classifier"]
        classifier = Classifier(spec["input_dim"], spec["num_classes"], TaskKind(spec["task_kind"]),
                                init_seed)
    return Network(encoder, projection=projection, classifier=classifier)


__all__ = [
    'ProjectionHead',
    'Classifier',
    'Network',
    'project',
    'build_pretrain_network',
    'attach_classifier',
    'network_from_description',
]
