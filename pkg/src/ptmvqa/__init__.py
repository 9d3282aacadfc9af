"""Video quality assessment over frozen pretrained-model features.

Pipeline: precomputed per-model feature files -> Davies-Bouldin model
selection and weighting -> learnable transform heads with weighted fusion ->
metric-constrained regression -> PLCC/SRCC evaluation with multi-view score
averaging.
"""

from . import _threads  # noqa: F401  (must run before numpy loads)

from .clustering import (ClusterSpec, DbiReport, assign_clusters,
                         build_dbi_report, compute_dbi, dbi_score,
                         model_weights, select_models)
from .estimator import QualityRegressor
from .evaluation import EvalReport, cross_evaluate, evaluate, plcc, srcc
from .feature_store import (DatasetBundle, FeatureFileError, FeatureTable,
                            MosLabels, SyntheticSpec, gen_synthetic,
                            load_dataset, read_feature_file, read_labels_file,
                            split_dataset, write_feature_file,
                            write_labels_file, write_manifest)
from .heads import (Checkpoint, HeadParams, aggregate, backward, init_heads,
                    load_checkpoint, predict, save_checkpoint,
                    transform_forward)
from .losses import (LossBreakdown, batch_centroids, inter_loss, intra_loss,
                     loss_with_grads, smooth_l1, total_loss)
from .training import (AdamWState, EpochRecord, TrainConfig, adamw_step,
                       lr_at, make_balanced_batches, train)
from .validation import ValidationError

__version__ = "0.1.0"

__all__ = [
    "AdamWState", "Checkpoint", "ClusterSpec", "DatasetBundle", "DbiReport",
    "EpochRecord", "EvalReport", "FeatureFileError", "FeatureTable",
    "HeadParams", "LossBreakdown", "MosLabels", "QualityRegressor",
    "SyntheticSpec", "TrainConfig", "ValidationError", "adamw_step",
    "aggregate", "assign_clusters", "backward", "batch_centroids",
    "build_dbi_report", "compute_dbi", "cross_evaluate", "dbi_score",
    "evaluate", "gen_synthetic", "init_heads", "inter_loss", "intra_loss",
    "load_checkpoint", "load_dataset", "loss_with_grads", "lr_at",
    "make_balanced_batches", "model_weights", "plcc", "predict",
    "read_feature_file", "read_labels_file", "save_checkpoint",
    "select_models", "smooth_l1", "split_dataset", "srcc", "total_loss",
    "train", "transform_forward", "write_feature_file", "write_labels_file",
    "write_manifest",
]
