"""Correlation metrics and checkpoint evaluation with multi-view averaging.

Predicted quality for a video is the mean of the per-view scores (feature-
level averaging is available behind view_mode="feature"). Reports carry raw
correlations in [-1, 1]; values are never clamped, so anticorrelation stays
visible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .feature_store import DatasetBundle, load_dataset
from .heads import Checkpoint, predict
from .validation import ValidationError, require


def _rank(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties receiving the average of their positions."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def plcc(preds, targets) -> float:
    """Sample Pearson correlation."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    require(preds.shape == targets.shape and preds.ndim == 1,
            "preds and targets must be 1-d arrays of equal length")
    require(preds.size >= 2, "need at least 2 points")
    dp = preds - preds.mean()
    dt = targets - targets.mean()
    ssp = float(dp @ dp)
    sst = float(dt @ dt)
    if ssp == 0.0 or sst == 0.0:
        raise ValidationError("degenerate series: zero variance")
    return float(dp @ dt) / np.sqrt(ssp * sst)


def srcc(preds, targets) -> float:
    """Spearman rank-order correlation; ties get average ranks."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    require(preds.shape == targets.shape and preds.ndim == 1,
            "preds and targets must be 1-d arrays of equal length")
    require(preds.size >= 2, "need at least 2 points")
    return plcc(_rank(preds), _rank(targets))


@dataclass
class EvalReport:
    plcc: float
    srcc: float
    mean: float
    n_videos: int
    views_per_video: int
    dataset: str
    note: str = ""

    def csv_row(self) -> str:
        return f"{self.dataset},{self.n_videos},{self.plcc:.6f},{self.srcc:.6f},{self.mean:.6f}"

    @staticmethod
    def csv_header() -> str:
        return "dataset,n,plcc,srcc,mean"


def _checkpoint_tables(checkpoint: Checkpoint, bundle: DatasetBundle):
    """The bundle's tables in checkpoint model order, dims verified."""
    by_id = {t.model_id: t for t in bundle.tables}
    tables = []
    for model_id, head in zip(checkpoint.model_ids, checkpoint.params.heads):
        if model_id not in by_id:
            raise ValidationError(
                f"dataset is missing features for model {model_id!r}")
        table = by_id[model_id]
        if table.dim != head.dim:
            raise ValidationError(
                f"model {model_id!r}: dataset features have dim {table.dim}, "
                f"checkpoint expects {head.dim}")
        tables.append(table)
    return tables


def predict_video(checkpoint: Checkpoint, tables, video_id: str,
                  view_mode: str = "score") -> float:
    require(view_mode in ("score", "feature"),
            "view_mode must be 'score' or 'feature'")
    views = tables[0].views_of(video_id)
    require(bool(views), f"video {video_id!r} has no views")
    if view_mode == "feature":
        feats = [t.video_mean(video_id) for t in tables]
        score, _ = predict(checkpoint.params, feats, checkpoint.weights)
        return score
    scores = []
    for view in views:
        feats = [t.entries[(video_id, view)] for t in tables]
        score, _ = predict(checkpoint.params, feats, checkpoint.weights)
        scores.append(score)
    return float(np.mean(scores))


def evaluate(checkpoint: Checkpoint, bundle: DatasetBundle,
             split: str | None = None, view_mode: str = "score") -> EvalReport:
    """Score every video on the (optionally filtered) split and correlate
    against the MOS labels."""
    checkpoint.validate()
    tables = _checkpoint_tables(checkpoint, bundle)
    videos = bundle.videos(split)
    require(len(videos) >= 2,
            f"need at least 2 videos to evaluate (split={split!r} has {len(videos)})")
    preds = np.array([predict_video(checkpoint, tables, v, view_mode) for v in videos])
    targets = np.array([bundle.labels.entries[v] for v in videos])
    p = plcc(preds, targets)
    s = srcc(preds, targets)
    total_views = sum(len(tables[0].views_of(v)) for v in videos)
    return EvalReport(plcc=p, srcc=s, mean=0.5 * (p + s),
                      n_videos=len(videos),
                      views_per_video=int(round(total_views / len(videos))),
                      dataset=bundle.name)


def cross_evaluate(checkpoint: Checkpoint, manifest_path,
                   view_mode: str = "score") -> EvalReport:
    """Evaluate over every video of a foreign dataset (no split). Flags the
    report 'in-domain' when the dataset is the checkpoint's own source."""
    bundle = load_dataset(manifest_path)
    report = evaluate(checkpoint, bundle, split=None, view_mode=view_mode)
    if checkpoint.source_dataset and bundle.name == checkpoint.source_dataset:
        report.note = "in-domain"
    return report
