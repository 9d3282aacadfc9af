"""Scikit-learn estimator facade over the training pipeline.

X is a dense (n_samples, sum(dims)) matrix of concatenated per-model feature
vectors; `dims` says where each model's block starts. y holds MOS targets on
the 1.0-5.0 scale (the quality clusters are derived from it). The estimator
supports get_params/set_params/clone and composes with sklearn model
selection utilities.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .clustering import assign_clusters, dbi_score, model_weights
from .feature_store import DatasetBundle, FeatureTable, MosLabels
from .heads import predict
from .training import TrainConfig, train
from .validation import (ValidationError, as_float_matrix, as_float_vector,
                         check_mos_range, check_same_length, require, split_columns)


class QualityRegressor(BaseEstimator, RegressorMixin):
    """Quality regressor over concatenated frozen-model features.

    Parameters mirror the training configuration; `weights` chooses the
    per-model fusion coefficients: "uniform", "dbi" (1 / Davies-Bouldin score
    of each model's block under the quality clusters), or an explicit
    positive sequence.
    """

    def __init__(self, dims=None, weights="dbi", epochs=60, batch_size=32,
                 base_lr=1e-3, weight_decay=0.02, warmup_epochs=2,
                 margin=0.05, metric_weight=0.2, embed_dim=128,
                 hidden_dim=256, clusters=6, use_intra=True,
                 inter_mode="centroid", seed=0):
        self.dims = dims
        self.weights = weights
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.weight_decay = weight_decay
        self.warmup_epochs = warmup_epochs
        self.margin = margin
        self.metric_weight = metric_weight
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.clusters = clusters
        self.use_intra = use_intra
        self.inter_mode = inter_mode
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           base_lr=self.base_lr, weight_decay=self.weight_decay,
                           warmup_epochs=self.warmup_epochs, margin=self.margin,
                           metric_weight=self.metric_weight,
                           embed_dim=self.embed_dim, hidden_dim=self.hidden_dim,
                           clusters=self.clusters, seed=self.seed,
                           use_intra=self.use_intra, inter_mode=self.inter_mode)

    def _resolve_dims(self, X: np.ndarray) -> list[int]:
        if self.dims is None:
            return [X.shape[1]]
        return [int(d) for d in self.dims]

    def fit(self, X, y):
        X = as_float_matrix(X, "X")
        y = as_float_vector(y, "y")
        check_same_length(X, y, "X", "y")
        check_mos_range(y, "y")
        dims = self._resolve_dims(X)
        blocks = split_columns(X, dims, "X")

        video_ids = [f"r{i:06d}" for i in range(X.shape[0])]
        labels = MosLabels(dict(zip(video_ids, y.tolist())))
        tables = [
            FeatureTable(model_id=f"m{n:02d}", dim=dims[n],
                         entries={(vid, 0): blocks[n][i]
                                  for i, vid in enumerate(video_ids)})
            for n in range(len(dims))
        ]
        bundle = DatasetBundle(tables=tables, labels=labels,
                               split={vid: "train" for vid in video_ids},
                               name="estimator")

        config = self._config()
        spec = config.resolved_cluster_spec()
        if isinstance(self.weights, str):
            if self.weights == "uniform":
                omega = np.ones(len(dims))
            elif self.weights == "dbi":
                assignment = assign_clusters(labels, spec)
                order = sorted(assignment)
                ids = np.array([assignment[v] for v in order])
                rows = {v: i for i, v in enumerate(video_ids)}
                scores = [dbi_score(block[[rows[v] for v in order]], ids)
                          for block in blocks]
                omega = model_weights(scores)
            else:
                raise ValidationError(
                    f"weights must be 'uniform', 'dbi', or a sequence, got {self.weights!r}")
        else:
            omega = np.asarray(self.weights, dtype=np.float64)

        self.checkpoint_, self.history_ = train(bundle, config, omega)
        self.dims_ = dims
        self.weights_ = np.asarray(self.checkpoint_.weights)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        require(hasattr(self, "checkpoint_"), "estimator is not fitted yet")
        X = as_float_matrix(X, "X")
        blocks = split_columns(X, self.dims_, "X")
        scores = np.empty(X.shape[0])
        for i in range(X.shape[0]):
            scores[i], _ = predict(self.checkpoint_.params,
                                   [b[i] for b in blocks],
                                   self.checkpoint_.weights)
        return scores
