"""
評估模組
指標、bootstrap 信賴區間、檢查點評估與標籤效率曲線
"""

from .metrics import (
    PredictionSet,
    SensitivityResult,
    MeanAucResult,
    topk_accuracy,
    topk_sensitivity,
    roc_auc,
    mean_auc,
    multiclass_auc,
    get_metric,
    default_metrics,
    selection_metric,
)
from .bootstrap import BootstrapResult, PairedResult, bootstrap_ci, paired_significance
from .evaluate import (
    MetricEntry,
    MetricsReport,
    build_prediction_set,
    evaluate_predictions,
    evaluate_network,
    evaluate_checkpoint,
    predictions_for_checkpoint,
)
from .label_efficiency import (
    DEFAULT_FRACTIONS,
    LabelEfficiencyResult,
    parse_inits,
    check_fractions,
    spearman,
    curve_trend,
    label_efficiency_sweep,
)

__all__ = [
    'PredictionSet',
    'SensitivityResult',
    'MeanAucResult',
    'topk_accuracy',
    'topk_sensitivity',
    'roc_auc',
    'mean_auc',
    'multiclass_auc',
    'get_metric',
    'default_metrics',
    'selection_metric',
    'BootstrapResult',
    'PairedResult',
    'bootstrap_ci',
    'paired_significance',
    'MetricEntry',
    'MetricsReport',
    'build_prediction_set',
    'evaluate_predictions',
    'evaluate_network',
    'evaluate_checkpoint',
    'predictions_for_checkpoint',
    'DEFAULT_FRACTIONS',
    'LabelEfficiencyResult',
    'parse_inits',
    'check_fractions',
    'spearman',
    'curve_trend',
    'label_efficiency_sweep',
]
