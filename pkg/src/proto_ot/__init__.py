"""Prototype-based bona fide / spoof classification with optimal-transport
few-shot domain adaptation."""

from .adapt import AdaptedBank, adapt_one_class, adapt_prototypes
from .estimators import LightweightAdapter, PrototypeClassifier, TransportAdapter
from .features import (FeatureRecord, FeatureSet, FeatureTableError, SynthConfig,
                       l2_normalize, load_feature_table, save_feature_table,
                       split_few_shot, synth_multidomain)
from .light import (LightTrainConfig, LinearClassifier, cross_entropy,
                    load_linear_classifier, predict_linear,
                    save_linear_classifier, train_light)
from .metrics import (MetricReport, ScoreSet, auc, baseline_linear_probe,
                      baseline_manifold_mixup, baseline_ncm, hter_at_eer,
                      metric_report, roc_points, tpr_at_fpr)
from .mixup import (BarycenterConfig, SyntheticBatch, beta_sample,
                    free_support_barycenter, sample_mixup_batch)
from .ot import (CostMatrix, OTConfig, TransportPlan, barycentric_projection,
                 cost_cosine, cost_sqeuclidean, exact_ot_small, laplacian_reg_ot,
                 sinkhorn)
from .prototypes import (LossBreakdown, PrototypeBank, TrainConfig, classify,
                         decision_scores, load_prototype_bank, loss_orth,
                         loss_proto, loss_supcon, mean_cosine,
                         save_prototype_bank, total_loss, train_prototypes)
from .protocol import ProtocolConfig, run_protocol

__version__ = "0.1.0"

__all__ = [
    "AdaptedBank", "adapt_one_class", "adapt_prototypes",
    "LightweightAdapter", "PrototypeClassifier", "TransportAdapter",
    "FeatureRecord", "FeatureSet", "FeatureTableError", "SynthConfig",
    "l2_normalize", "load_feature_table", "save_feature_table",
    "split_few_shot", "synth_multidomain",
    "LightTrainConfig", "LinearClassifier", "cross_entropy",
    "load_linear_classifier", "predict_linear", "save_linear_classifier",
    "train_light",
    "MetricReport", "ScoreSet", "auc", "baseline_linear_probe",
    "baseline_manifold_mixup", "baseline_ncm", "hter_at_eer",
    "metric_report", "roc_points", "tpr_at_fpr",
    "BarycenterConfig", "SyntheticBatch", "beta_sample",
    "free_support_barycenter", "sample_mixup_batch",
    "CostMatrix", "OTConfig", "TransportPlan", "barycentric_projection",
    "cost_cosine", "cost_sqeuclidean", "exact_ot_small", "laplacian_reg_ot",
    "sinkhorn",
    "LossBreakdown", "PrototypeBank", "TrainConfig", "classify",
    "decision_scores", "load_prototype_bank", "loss_orth", "loss_proto",
    "loss_supcon", "mean_cosine", "save_prototype_bank", "total_loss",
    "train_prototypes",
    "ProtocolConfig", "run_protocol",
]
