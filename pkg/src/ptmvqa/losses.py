"""Training objective: smooth-L1 regression plus two metric constraints.

The intra term pulls the per-model transformed features of one sample toward
a common direction (pairwise cosine agreement). The inter term is a hinge on
squared distances between each fused vector and quality-cluster centroids
computed from the batch, with the nearest other-cluster centroid as the
negative. Both metric terms are batch means, so the balance coefficient is
independent of batch size.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .validation import require

INTER_MODES = ("centroid", "sample-triplet", "none")


@dataclass
class LossBreakdown:
    l1: float
    intra: float
    inter: float
    total: float
    margin: float
    metric_weight: float

    def validate(self) -> None:
        for name in ("l1", "intra", "inter", "total"):
            require(bool(np.isfinite(getattr(self, name))), f"{name} is not finite")
        require(self.l1 >= 0 and self.intra >= 0 and self.inter >= 0,
                "loss terms must be nonnegative")


def smooth_l1(preds, targets) -> float:
    """Huber loss with threshold 1, mean over the batch."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    require(preds.shape == targets.shape, "preds and targets must have the same shape")
    err = preds - targets
    per = np.where(np.abs(err) < 1.0, 0.5 * err * err, np.abs(err) - 0.5)
    return float(per.mean())


def smooth_l1_grad(preds, targets) -> np.ndarray:
    """d smooth_l1 / d preds, including the 1/B of the mean."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    err = preds - targets
    return np.where(np.abs(err) < 1.0, err, np.sign(err)) / preds.size


def intra_loss(transformed) -> float:
    """Mean over model pairs of (1 - cosine similarity); range [0, 2]."""
    stacked = np.asarray(transformed, dtype=np.float64)
    n = stacked.shape[0]
    require(n >= 2, "intra loss needs features from at least 2 models")
    norms = np.linalg.norm(stacked, axis=1)
    require(bool((norms > 0).all()), "cosine undefined for a zero-norm feature vector")
    unit = stacked / norms[:, None]
    cos = unit @ unit.T
    upper = cos[np.triu_indices(n, k=1)]
    return float((1.0 - upper).sum() * 2.0 / (n * (n - 1)))


def intra_loss_grad(transformed) -> np.ndarray:
    """Gradient of intra_loss w.r.t. each model's transformed feature."""
    stacked = np.asarray(transformed, dtype=np.float64)
    n = stacked.shape[0]
    norms = np.linalg.norm(stacked, axis=1)
    unit = stacked / norms[:, None]
    cos = unit @ unit.T
    scale = 2.0 / (n * (n - 1))
    grads = np.zeros_like(stacked)
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            # d(1 - cos(f_a, f_b)) / d f_a, each unordered pair counted once
            dcos = unit[b] / norms[a] - cos[a, b] * stacked[a] / norms[a] ** 2
            grads[a] -= scale * dcos
    return grads


def batch_centroids(fused: np.ndarray, cluster_ids: np.ndarray) -> dict[int, tuple[np.ndarray, int]]:
    """Per-cluster mean of the fused vectors present in the batch."""
    fused = np.asarray(fused, dtype=np.float64)
    cluster_ids = np.asarray(cluster_ids)
    require(fused.ndim == 2 and fused.shape[0] == cluster_ids.shape[0],
            "fused rows and cluster_ids must align")
    require(fused.shape[0] >= 1, "batch must be nonempty")
    out: dict[int, tuple[np.ndarray, int]] = {}
    for k in np.unique(cluster_ids):
        members = fused[cluster_ids == k]
        out[int(k)] = (members.mean(axis=0), int(members.shape[0]))
    return out


def _nearest_negative(anchor: np.ndarray, anchor_cluster: int,
                      centroids: dict[int, tuple[np.ndarray, int]]) -> int | None:
    best_k, best_d = None, np.inf
    for k in sorted(centroids):
        if k == anchor_cluster:
            continue
        d = float(np.linalg.norm(anchor - centroids[k][0]))
        if d < best_d:
            best_k, best_d = k, d
    return best_k


def inter_loss(anchor: np.ndarray, anchor_cluster: int,
               centroids: dict[int, tuple[np.ndarray, int]],
               margin: float) -> float:
    """Centroid triplet hinge for one anchor.

    Positive is the anchor's own cluster centroid (which includes the anchor
    itself); negative is the nearest other-cluster centroid. An anchor with
    no other cluster in the batch contributes 0.
    """
    anchor = np.asarray(anchor, dtype=np.float64)
    require(anchor_cluster in centroids,
            f"no centroid for anchor cluster {anchor_cluster}")
    neg = _nearest_negative(anchor, anchor_cluster, centroids)
    if neg is None:
        return 0.0
    pos_c = centroids[anchor_cluster][0]
    d_pos = float(((anchor - pos_c) ** 2).sum())
    d_neg = float(((anchor - centroids[neg][0]) ** 2).sum())
    return max(d_pos - d_neg + margin, 0.0)


def _sample_triplet_choices(cluster_ids: np.ndarray, rng: np.random.Generator):
    """Random in-batch positive/negative per anchor; independent of feature
    values so the choice is stable under parameter perturbations."""
    batch = cluster_ids.shape[0]
    choices = []
    for i in range(batch):
        same = [j for j in range(batch) if j != i and cluster_ids[j] == cluster_ids[i]]
        diff = [j for j in range(batch) if cluster_ids[j] != cluster_ids[i]]
        if not same or not diff:
            choices.append(None)
            continue
        choices.append((same[rng.integers(len(same))], diff[rng.integers(len(diff))]))
    return choices


def total_loss(preds, targets, transformed, fused, cluster_ids,
               margin: float = 0.05, metric_weight: float = 0.2, *,
               use_intra: bool = True, inter_mode: str = "centroid",
               rng: np.random.Generator | None = None) -> LossBreakdown:
    """Combined objective: smooth-L1 plus metric_weight * (intra + inter),
    both metric terms averaged over the batch."""
    breakdown, _, _, _ = loss_with_grads(
        preds, targets, transformed, fused, cluster_ids,
        margin=margin, metric_weight=metric_weight,
        use_intra=use_intra, inter_mode=inter_mode, rng=rng)
    return breakdown


def loss_with_grads(preds, targets, transformed, fused, cluster_ids,
                    margin: float = 0.05, metric_weight: float = 0.2, *,
                    use_intra: bool = True, inter_mode: str = "centroid",
                    rng: np.random.Generator | None = None):
    """Loss breakdown plus exact gradients at the network outputs.

    Returns (breakdown, dscore (B,), dfused (B, D), dtransformed (B, N, D)).
    transformed is (B, N, D); fused is (B, D). Gradients include every path,
    in particular the dependence of batch centroids on each fused vector.
    """
    require(inter_mode in INTER_MODES, f"inter_mode must be one of {INTER_MODES}")
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    transformed = np.asarray(transformed, dtype=np.float64)
    fused = np.asarray(fused, dtype=np.float64)
    cluster_ids = np.asarray(cluster_ids)
    batch, n_models = transformed.shape[0], transformed.shape[1]
    require(preds.shape == (batch,) and targets.shape == (batch,),
            "preds/targets must have one entry per sample")
    require(fused.shape[0] == batch and cluster_ids.shape == (batch,),
            "fused/cluster_ids must have one entry per sample")

    l1 = smooth_l1(preds, targets)
    dscore = smooth_l1_grad(preds, targets)
    dfused = np.zeros_like(fused)
    dtransformed = np.zeros_like(transformed)

    intra = 0.0
    if use_intra and n_models >= 2:
        for i in range(batch):
            intra += intra_loss(transformed[i])
            dtransformed[i] += (metric_weight / batch) * intra_loss_grad(transformed[i])
        intra /= batch

    inter = 0.0
    if inter_mode == "centroid":
        centroids = batch_centroids(fused, cluster_ids)
        members = {k: np.flatnonzero(cluster_ids == k) for k in centroids}
        skipped = 0
        for i in range(batch):
            k = int(cluster_ids[i])
            neg = _nearest_negative(fused[i], k, centroids)
            if neg is None:
                skipped += 1
                continue
            pos_c, pos_n = centroids[k]
            neg_c, neg_n = centroids[neg]
            value = float(((fused[i] - pos_c) ** 2).sum()
                          - ((fused[i] - neg_c) ** 2).sum() + margin)
            if value <= 0.0:
                continue
            inter += value
            coeff = metric_weight / batch
            dfused[i] += coeff * 2.0 * ((fused[i] - pos_c) - (fused[i] - neg_c))
            dfused[members[k]] += coeff * (-2.0 / pos_n) * (fused[i] - pos_c)
            dfused[members[neg]] += coeff * (2.0 / neg_n) * (fused[i] - neg_c)
        inter /= batch
        if skipped:
            warnings.warn(
                f"{skipped} anchor(s) had no other cluster in the batch and "
                "contributed 0 inter loss; consider a coarser cluster spec or "
                "larger batches", RuntimeWarning, stacklevel=2)
    elif inter_mode == "sample-triplet":
        require(rng is not None, "sample-triplet mode needs an rng")
        for i, choice in enumerate(_sample_triplet_choices(cluster_ids, rng)):
            if choice is None:
                continue
            j, l = choice
            value = float(((fused[i] - fused[j]) ** 2).sum()
                          - ((fused[i] - fused[l]) ** 2).sum() + margin)
            if value <= 0.0:
                continue
            inter += value
            coeff = metric_weight / batch
            dfused[i] += coeff * 2.0 * ((fused[i] - fused[j]) - (fused[i] - fused[l]))
            dfused[j] += coeff * (-2.0) * (fused[i] - fused[j])
            dfused[l] += coeff * 2.0 * (fused[i] - fused[l])
        inter /= batch

    total = l1 + metric_weight * (intra + inter)
    breakdown = LossBreakdown(l1=l1, intra=float(intra), inter=float(inter),
                              total=float(total), margin=margin,
                              metric_weight=metric_weight)
    return breakdown, dscore, dfused, dtransformed
