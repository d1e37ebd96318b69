"""
評估指標與 bootstrap 信賴區間
"""

import numpy as np
import pytest

from corpus import TaskKind
from errors import ConfigError, UndefinedMetricError, ValidationError
from evaluation import (
    PredictionSet,
    bootstrap_ci,
    default_metrics,
    get_metric,
    mean_auc,
    multiclass_auc,
    paired_significance,
    roc_auc,
    topk_accuracy,
    topk_sensitivity,
)
from evaluation.bootstrap import percentile_interval
from tools.verification import brute_force_auc


def multiclass(scores, labels):
    scores = np.asarray(scores, dtype=float)
    return PredictionSet(bag_ids=[f"b{i}" for i in range(len(labels))], scores=scores,
                         labels=np.asarray(labels))


class TestTopK:
    def test_all_correct(self):
        preds = multiclass(np.eye(4), [0, 1, 2, 3])
        assert topk_accuracy(preds, 1) == 1.0

    def test_ranked_first_third_fourth(self):
        scores = [[0.9, 0.05, 0.03, 0.02],
                  [0.5, 0.3, 0.15, 0.05],
                  [0.4, 0.3, 0.2, 0.1]]
        # 真實類別名次：第 1、第 3、第 4
        preds = multiclass(scores, [0, 2, 3])
        assert topk_accuracy(preds, 3) == pytest.approx(2 / 3)

    def test_ties_prefer_lower_index(self):
        preds = multiclass(np.zeros((2, 3)), [0, 2])
        assert topk_accuracy(preds, 1) == 0.5

    def test_uniform_scores_with_shuffled_classes(self, rng):
        n, k = 5400, 27
        labels = rng.integers(0, k, n)
        preds = multiclass(np.zeros((n, k)), labels)
        assert topk_accuracy(preds, 3) == pytest.approx(3 / 27, abs=0.015)

    def test_k_out_of_range(self):
        with pytest.raises(ConfigError):
            topk_accuracy(multiclass(np.eye(3), [0, 1, 2]), 4)


class TestSensitivity:
    def test_single_class_all_correct(self):
        result = topk_sensitivity(multiclass([[1.0, 0.0], [0.9, 0.1]], [0, 0]), 1)
        assert result.average == 1.0
        assert result.classes_averaged == 1

    def test_macro_average_ignores_counts(self):
        scores = [[1.0, 0.0]] * 9 + [[1.0, 0.0]]
        result = topk_sensitivity(multiclass(scores, [0] * 9 + [1]), 1)
        assert result.per_class == {0: 1.0, 1: 0.0}
        assert result.average == 0.5

    def test_skip_classes(self):
        scores = [[1.0, 0.0]] * 9 + [[1.0, 0.0]]
        result = topk_sensitivity(multiclass(scores, [0] * 9 + [1]), 1, skip_classes=[1])
        assert result.per_class == {0: 1.0}
        assert result.classes_averaged == 1


class TestAuc:
    def test_hand_counted(self):
        assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    def test_perfect_and_ties(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert roc_auc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5

    def test_single_class(self):
        with pytest.raises(UndefinedMetricError):
            roc_auc([0.1, 0.2], [1, 1])
        with pytest.raises(UndefinedMetricError):
            roc_auc([0.1, 0.2], [0, 0])

    def test_boolean_labels(self):
        assert roc_auc([0.1, 0.4, 0.35, 0.8], np.array([False, False, True, True])) == 0.75

    def test_monotone_transform(self, rng):
        scores = rng.uniform(0, 1, 80)
        labels = rng.integers(0, 2, 80)
        assert roc_auc(np.exp(3.0 * scores) + 1.0, labels) == pytest.approx(
            roc_auc(scores, labels), abs=1e-12)

    def test_matches_brute_force(self, rng):
        scores = np.round(rng.uniform(0, 1, 200), 2)
        labels = rng.integers(0, 2, 200)
        assert roc_auc(scores, labels) == pytest.approx(brute_force_auc(scores, labels), abs=1e-12)

    def test_complement(self, rng):
        scores = rng.uniform(0, 1, 50)
        labels = rng.integers(0, 2, 50)
        assert roc_auc(-scores, labels) == pytest.approx(1.0 - roc_auc(scores, labels), abs=1e-12)

    def test_invariant_to_monotone_transform(self, rng):
        scores = rng.uniform(0.01, 1, 60)
        labels = rng.integers(0, 2, 60)
        assert roc_auc(np.log(scores), labels) == roc_auc(scores, labels)

    def test_mean_auc_two_classes(self):
        preds = PredictionSet(
            bag_ids=["a", "b", "c", "d"],
            scores=[[0.9, 0.5], [0.8, 0.5], [0.1, 0.5], [0.2, 0.5]],
            labels=[[1, 1], [1, 0], [0, 1], [0, 0]],
            task_kind=TaskKind.MULTILABEL,
        )
        result = mean_auc(preds)
        assert result.per_class == {0: 1.0, 1: 0.5}
        assert result.value == 0.75

    def test_mean_auc_skips_degenerate_class(self, rng):
        labels = rng.integers(0, 2, (40, 5))
        labels[:, 3] = 1
        preds = PredictionSet(bag_ids=[str(i) for i in range(40)], scores=rng.uniform(0, 1, (40, 5)),
                              labels=labels, task_kind=TaskKind.MULTILABEL)
        result = mean_auc(preds)
        assert result.skipped == [3]
        assert len(result.per_class) == 4

    def test_all_degenerate(self):
        preds = PredictionSet(bag_ids=["a", "b"], scores=[[0.1, 0.2], [0.3, 0.4]],
                              labels=[[1, 0], [1, 0]], task_kind=TaskKind.MULTILABEL)
        with pytest.raises(UndefinedMetricError):
            mean_auc(preds)

    def test_multiclass_one_vs_rest(self):
        preds = multiclass(np.eye(3), [0, 1, 2])
        assert multiclass_auc(preds).value == 1.0


class TestRegistry:
    def test_per_class_auc_name(self):
        preds = PredictionSet(bag_ids=["a", "b"], scores=[[0.9, 0.1], [0.2, 0.8]],
                              labels=[[1, 0], [0, 1]], task_kind=TaskKind.MULTILABEL,
                              class_names=["edema", "effusion"])
        assert get_metric("auc[effusion]")(preds) == 1.0

    def test_unknown_metric(self):
        with pytest.raises(ConfigError):
            get_metric("f1")

    def test_defaults(self):
        assert default_metrics(TaskKind.MULTILABEL, ["x", "y"]) == ["mean_auc", "auc[x]", "auc[y]"]
        assert "top3" in default_metrics(TaskKind.MULTICLASS, ["a", "b", "c"])
        assert "top3" not in default_metrics(TaskKind.MULTICLASS, ["a", "b"])


class TestBootstrap:
    def test_percentile_positions(self):
        assert percentile_interval(np.arange(1000)) == (25.0, 975.0)

    def test_constant_metric(self):
        preds = multiclass(np.eye(3)[[0, 1, 2, 0, 1]], [0, 1, 2, 0, 1])
        result = bootstrap_ci(preds, get_metric("top1"), replicates=50, seed=1)
        assert result.ci_low == result.point == result.ci_high == 1.0

    def test_same_seed_same_interval(self, rng):
        preds = multiclass(rng.uniform(0, 1, (40, 4)), rng.integers(0, 4, 40))
        first = bootstrap_ci(preds, get_metric("top1"), replicates=200, seed=3)
        second = bootstrap_ci(preds, get_metric("top1"), replicates=200, seed=3)
        assert (first.ci_low, first.ci_high) == (second.ci_low, second.ci_high)
        assert first.ci_low <= first.point <= first.ci_high

    def test_too_many_degenerate_replicates(self):
        preds = multiclass(np.eye(3), [0, 1, 2])

        def distinct_only(p):
            # 3 個樣本重抽後全不重複的機率 6/27
            if len(set(p.bag_ids)) < len(p):
                raise UndefinedMetricError("重複樣本")
            return 1.0

        with pytest.raises(UndefinedMetricError):
            bootstrap_ci(preds, distinct_only, replicates=400, seed=0)

    def test_paired_identity(self, rng):
        preds = multiclass(rng.uniform(0, 1, (30, 3)), rng.integers(0, 3, 30))
        result = paired_significance(preds, preds, get_metric("top1"), replicates=100, seed=0)
        assert result.delta == 0.0
        assert not result.significant_at_05

    def test_paired_detects_flipped_predictions(self, rng):
        n = 500
        labels = rng.integers(0, 2, n)
        good = np.eye(2)[labels]
        bad = good.copy()
        flip = rng.choice(n, size=int(0.3 * n), replace=False)
        bad[flip] = np.eye(2)[1 - labels[flip]]
        result = paired_significance(multiclass(good, labels), multiclass(bad, labels),
                                     get_metric("top1"), replicates=300, seed=0)
        assert result.delta == pytest.approx(0.3)
        assert result.significant_at_05

    def test_paired_requires_same_bags(self):
        a = multiclass(np.eye(2), [0, 1])
        b = PredictionSet(bag_ids=["x", "y"], scores=np.eye(2), labels=np.array([0, 1]))
        with pytest.raises(ValidationError):
            paired_significance(a, b, get_metric("top1"), replicates=10)
