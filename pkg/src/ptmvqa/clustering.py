"""MOS-interval pseudo-clusters, Davies-Bouldin scoring of frozen features,
model selection and aggregation weights.

A model whose raw features already separate the quality intervals well gets a
low Davies-Bouldin index and, through weight = 1/score, a larger share of the
fused representation. Scores are computed once, offline, on raw features
(per-video mean over views), so selection never requires training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .feature_store import FeatureTable, MosLabels
from .validation import ValidationError, require

# Interval presets over the 1.0-5.0 MOS scale. Intervals are [p, q) with the
# top interval closed at 5.0 so every legal MOS has a home.
_PRESETS = {
    2: ((1.0, 3.0), (3.0, 5.0)),
    4: ((1.0, 2.0), (2.0, 3.0), (3.0, 4.0), (4.0, 5.0)),
    6: ((1.0, 2.0), (2.0, 2.5), (2.5, 3.0), (3.0, 3.5), (3.5, 4.0), (4.0, 5.0)),
}


@dataclass(frozen=True)
class ClusterSpec:
    """Ordered, disjoint quality intervals covering [1.0, 5.0]."""

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        require(len(self.intervals) >= 2, "need at least 2 intervals")
        prev_end = 1.0
        for i, (lo, hi) in enumerate(self.intervals):
            require(lo < hi, f"interval {i} is empty: [{lo}, {hi})")
            require(lo == prev_end,
                    f"interval {i} starts at {lo}, expected {prev_end} (must tile [1, 5])")
            prev_end = hi
        require(prev_end == 5.0, f"intervals end at {prev_end}, must cover up to 5.0")

    @property
    def k(self) -> int:
        return len(self.intervals)

    @classmethod
    def preset(cls, k: int) -> "ClusterSpec":
        require(k in _PRESETS, f"no preset for k={k}; choose from {sorted(_PRESETS)}")
        return cls(_PRESETS[k])

    def assign(self, mos: float) -> int:
        require(1.0 <= mos <= 5.0, f"MOS {mos} outside [1, 5]")
        for i, (lo, hi) in enumerate(self.intervals):
            if lo <= mos < hi:
                return i
        return self.k - 1  # mos == 5.0, closed top interval


def assign_clusters(labels: MosLabels, spec: ClusterSpec) -> dict[str, int]:
    """Map every labeled video to its quality interval index."""
    labels.validate()
    return {vid: spec.assign(mos) for vid, mos in labels.entries.items()}


def dbi_score(matrix: np.ndarray, cluster_ids: np.ndarray) -> float:
    """Davies-Bouldin index of a clustering of row vectors.

    Mean over nonempty clusters of the worst (d_k + d_t) / ||c_k - c_t||
    ratio, where c_k is the cluster centroid and d_k the mean Euclidean
    distance of members to it. Lower is better. Empty clusters are excluded
    from the average.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    cluster_ids = np.asarray(cluster_ids)
    require(matrix.ndim == 2 and matrix.shape[0] == cluster_ids.shape[0],
            "matrix rows and cluster_ids must align")
    present = np.unique(cluster_ids)
    require(present.size >= 2, "need at least 2 nonempty clusters")

    centroids = np.stack([matrix[cluster_ids == k].mean(axis=0) for k in present])
    scatters = np.array([
        np.linalg.norm(matrix[cluster_ids == k] - centroids[i], axis=1).mean()
        for i, k in enumerate(present)
    ])

    total = 0.0
    for i in range(present.size):
        worst = -np.inf
        for j in range(present.size):
            if i == j:
                continue
            gap = float(np.linalg.norm(centroids[i] - centroids[j]))
            if gap == 0.0:
                raise ValidationError(
                    f"degenerate centroids: clusters {present[i]} and {present[j]} coincide")
            worst = max(worst, (scatters[i] + scatters[j]) / gap)
        total += worst
    return total / present.size


def _video_matrix(table: FeatureTable, assignment: dict[str, int]):
    videos = sorted(assignment)
    matrix = np.stack([table.video_mean(v) for v in videos])
    ids = np.array([assignment[v] for v in videos])
    return matrix, ids


def compute_dbi(table: FeatureTable, assignment: dict[str, int]) -> float:
    """Davies-Bouldin index of one model's raw features under a MOS clustering.
    Per-video representation is the mean over that video's views."""
    require(bool(assignment), "assignment must be nonempty")
    matrix, ids = _video_matrix(table, assignment)
    return dbi_score(matrix, ids)


@dataclass
class DbiReport:
    model_id: str
    dbi: float
    weight: float
    cluster_sizes: dict[int, int]
    centroid_norms: dict[int, float]


def build_dbi_report(table: FeatureTable, assignment: dict[str, int]) -> DbiReport:
    matrix, ids = _video_matrix(table, assignment)
    score = dbi_score(matrix, ids)
    sizes: dict[int, int] = {}
    norms: dict[int, float] = {}
    for k in np.unique(ids):
        members = matrix[ids == k]
        sizes[int(k)] = int(members.shape[0])
        norms[int(k)] = float(np.linalg.norm(members.mean(axis=0)))
    return DbiReport(model_id=table.model_id, dbi=score, weight=1.0 / score,
                     cluster_sizes=sizes, centroid_norms=norms)


def model_weights(dbis: Sequence[float], floor: float | None = None) -> np.ndarray:
    """Aggregation weights 1/dbi, unnormalized (the fusion step normalizes).

    A zero score claims degenerate, perfect clustering; pass a positive
    `floor` to clamp instead of erroring.
    """
    arr = np.asarray(dbis, dtype=np.float64)
    require(arr.size >= 1, "need at least one score")
    require(bool(np.isfinite(arr).all()) and bool((arr >= 0).all()),
            "scores must be finite and nonnegative")
    if floor is not None:
        require(floor > 0, "floor must be positive")
        arr = np.maximum(arr, floor)
    if np.any(arr == 0.0):
        raise ValidationError(
            "a Davies-Bouldin score of 0 claims degenerate perfect clustering; "
            "pass floor=<small positive> to override")
    return 1.0 / arr


def select_models(scores: Sequence[tuple[str, float]],
                  max_models: int | None = None,
                  max_dbi: float | None = None) -> list[tuple[str, float]]:
    """Rank models by ascending score (ties by model_id) and keep a prefix:
    the first max_models, or all with score <= max_dbi."""
    require(len(scores) >= 1, "need at least one model")
    require(max_models is not None or max_dbi is not None,
            "pass max_models or max_dbi")
    ranked = sorted(scores, key=lambda item: (item[1], item[0]))
    if max_dbi is not None:
        ranked = [item for item in ranked if item[1] <= max_dbi]
        if not ranked:
            raise ValidationError(
                f"no model has score <= {max_dbi}; loosen the threshold")
    if max_models is not None:
        require(max_models >= 1, "max_models must be >= 1")
        ranked = ranked[:max_models]
    return ranked
