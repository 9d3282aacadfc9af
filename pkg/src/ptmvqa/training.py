"""Training loop: cluster-balanced batches, AdamW with decoupled decay, and a
cosine-annealed learning rate with linear warmup.

Batches interleave the quality clusters round-robin (per-cluster order and
per-round cluster order reshuffled from the epoch seed), so any batch of 4+
contains at least two clusters whenever the remaining pool allows. Every
training sample is consumed exactly once per epoch. Weight decay applies to
weight matrices only, never to biases or norm parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import evaluation
from .clustering import ClusterSpec, assign_clusters
from .feature_store import DatasetBundle, MosLabels
from .heads import Checkpoint, HeadParams, backward, init_heads, predict
from .losses import INTER_MODES, LossBreakdown, loss_with_grads
from .validation import ValidationError, require

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
# decoupled decay applies to these parameter names only
_DECAYED = ("w1", "w2", "w_out")

CHECKPOINT_POLICIES = ("last", "best-srcc")


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    base_lr: float = 1e-3
    weight_decay: float = 0.02
    warmup_epochs: int = 2
    margin: float = 0.05
    metric_weight: float = 0.2
    embed_dim: int = 128
    hidden_dim: int = 256
    clusters: int = 6
    cluster_spec: ClusterSpec | None = None
    train_fraction: float = 0.8
    seed: int = 0
    checkpoint_policy: str = "last"
    use_intra: bool = True
    inter_mode: str = "centroid"
    weight_mode: str = "dbi"

    def validate(self) -> None:
        require(self.epochs >= 0, "epochs must be >= 0")
        require(self.batch_size >= 4, "batch_size must be >= 4")
        require(self.base_lr > 0, "base_lr must be positive")
        require(self.weight_decay >= 0, "weight_decay must be >= 0")
        require(self.warmup_epochs >= 0, "warmup_epochs must be >= 0")
        if self.epochs > 0:
            require(self.warmup_epochs < self.epochs,
                    "warmup_epochs must be smaller than epochs")
        require(self.margin >= 0, "margin must be >= 0")
        require(self.metric_weight >= 0, "metric_weight must be >= 0")
        require(self.embed_dim > 0 and self.hidden_dim > 0,
                "embed_dim and hidden_dim must be positive")
        require(0.0 < self.train_fraction < 1.0, "train_fraction must lie in (0, 1)")
        require(self.checkpoint_policy in CHECKPOINT_POLICIES,
                f"checkpoint_policy must be one of {CHECKPOINT_POLICIES}")
        require(self.inter_mode in INTER_MODES,
                f"inter_mode must be one of {INTER_MODES}")
        require(self.weight_mode in ("dbi", "uniform"),
                "weight_mode must be 'dbi' or 'uniform'")
        self.resolved_cluster_spec()  # validates clusters / cluster_spec

    def resolved_cluster_spec(self) -> ClusterSpec:
        if self.cluster_spec is not None:
            return self.cluster_spec
        return ClusterSpec.preset(self.clusters)


def make_balanced_batches(assignments: dict[str, int], batch_size: int,
                          seed: int, epoch: int) -> list[list[str]]:
    """Partition the sample ids into batches stratified by cluster,
    deterministic per (seed, epoch)."""
    require(batch_size >= 4, "batch_size must be >= 4")
    clusters: dict[int, list[str]] = {}
    for sample, k in assignments.items():
        clusters.setdefault(k, []).append(sample)
    if len(clusters) < 2:
        raise ValidationError(
            "only one nonempty cluster in the training split; use a coarser "
            "cluster spec (fewer intervals) or more varied labels")

    rng = np.random.default_rng([seed, epoch])
    queues = {}
    for k in sorted(clusters):
        items = sorted(clusters[k])
        rng.shuffle(items)
        queues[k] = items[::-1]  # pop from the end

    sequence: list[str] = []
    while any(queues.values()):
        alive = sorted(k for k, q in queues.items() if q)
        order = list(alive)
        rng.shuffle(order)
        for k in order:
            if queues[k]:
                sequence.append(queues[k].pop())
    return [sequence[i:i + batch_size] for i in range(0, len(sequence), batch_size)]


def lr_at(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warmup to base_lr, then cosine annealing to ~0."""
    require(0 <= step < total_steps, f"step {step} outside [0, {total_steps})")
    if step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    span = total_steps - warmup_steps
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * (step - warmup_steps) / span))


@dataclass
class AdamWState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: HeadParams) -> "AdamWState":
        return cls(m={n: np.zeros_like(a) for n, a in params.named_arrays()},
                   v={n: np.zeros_like(a) for n, a in params.named_arrays()},
                   t=0)


def adamw_step(params: HeadParams, grads: dict[str, np.ndarray],
               state: AdamWState, lr: float, weight_decay: float) -> None:
    """One AdamW update, in place. Decay is decoupled and skips biases and
    norm gains/biases."""
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.t
    bc2 = 1.0 - ADAM_BETA2 ** state.t
    for name, param in params.named_arrays():
        grad = grads[name]
        require(grad.shape == param.shape, f"gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * grad
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * grad * grad
        update = (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        param -= lr * update
        if weight_decay and name.split(".")[-1] in _DECAYED:
            param -= lr * weight_decay * param


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    l1: float
    intra: float
    inter: float
    total: float
    test_plcc: float | None = None
    test_srcc: float | None = None

    def log_line(self) -> str:
        plcc = "nan" if self.test_plcc is None else f"{self.test_plcc:.6f}"
        srcc = "nan" if self.test_srcc is None else f"{self.test_srcc:.6f}"
        return (f"epoch={self.epoch} lr={self.lr:.8f} l1={self.l1:.8f} "
                f"intra={self.intra:.8f} inter={self.inter:.8f} "
                f"total={self.total:.8f} test_plcc={plcc} test_srcc={srcc}")


def _abort_if_not_finite(breakdown: LossBreakdown, epoch: int) -> None:
    for name in ("l1", "intra", "inter", "total"):
        if not np.isfinite(getattr(breakdown, name)):
            raise ValidationError(
                f"non-finite loss term {name!r} at epoch {epoch}; aborting")


def train(bundle: DatasetBundle, config: TrainConfig,
          weights) -> tuple[Checkpoint, list[EpochRecord]]:
    """Train the heads on the bundle's train split.

    `weights` are the per-model aggregation weights (from the DBI scores, or
    uniform). Deterministic for a fixed (bundle, config, weights, seed). The
    raw feature tables are never written to.
    """
    config.validate()
    bundle.validate()
    weights = np.asarray(weights, dtype=np.float64)
    require(weights.shape == (len(bundle.tables),),
            f"need one weight per model, got {weights.shape} for {len(bundle.tables)}")
    require(bool((weights > 0).all()), "weights must be positive")

    train_ids = bundle.videos("train")
    test_ids = bundle.videos("test")
    require(len(train_ids) >= 2, "bundle must be split with at least 2 training videos")

    spec = config.resolved_cluster_spec()
    train_labels = MosLabels({v: bundle.labels.entries[v] for v in train_ids})
    assignments = assign_clusters(train_labels, spec)

    # per-video training representation: mean over views, fixed per run
    per_model = [np.stack([t.video_mean(v) for v in train_ids]) for t in bundle.tables]
    targets = np.array([bundle.labels.entries[v] for v in train_ids])
    row_of = {v: i for i, v in enumerate(train_ids)}
    cluster_of = np.array([assignments[v] for v in train_ids])

    params = init_heads(bundle.dims(), config.embed_dim, config.hidden_dim, config.seed)
    opt = AdamWState.for_params(params)
    history: list[EpochRecord] = []

    checkpoint = Checkpoint(params=params, model_ids=bundle.model_ids(),
                            weights=weights, cluster_spec=spec,
                            source_dataset=bundle.name)
    if config.epochs == 0:
        return checkpoint, history

    n_batches = math.ceil(len(train_ids) / config.batch_size)
    total_steps = config.epochs * n_batches
    warmup_steps = config.warmup_epochs * n_batches

    best_srcc = -np.inf
    best_params = None
    step = 0
    for epoch in range(config.epochs):
        batches = make_balanced_batches(assignments, config.batch_size,
                                        config.seed, epoch)
        triplet_rng = np.random.default_rng([config.seed, 3, epoch])
        sums = np.zeros(4)
        lr = config.base_lr
        for batch_videos in batches:
            rows = [row_of[v] for v in batch_videos]
            preds = np.empty(len(rows))
            traces = []
            for bi, r in enumerate(rows):
                score, trace = predict(params, [m[r] for m in per_model], weights)
                preds[bi] = score
                traces.append(trace)
            transformed = np.stack([np.stack(t.transformed) for t in traces])
            fused = np.stack([t.fused for t in traces])
            breakdown, dscore, dfused, dtransformed = loss_with_grads(
                preds, targets[rows], transformed, fused, cluster_of[rows],
                margin=config.margin, metric_weight=config.metric_weight,
                use_intra=config.use_intra, inter_mode=config.inter_mode,
                rng=triplet_rng)
            _abort_if_not_finite(breakdown, epoch)
            grads = backward(params, traces, dscore, dfused, dtransformed)
            lr = lr_at(step, total_steps, warmup_steps, config.base_lr)
            adamw_step(params, grads, opt, lr, config.weight_decay)
            step += 1
            sums += len(rows) * np.array([breakdown.l1, breakdown.intra,
                                          breakdown.inter, breakdown.total])
        means = sums / len(train_ids)

        test_plcc = test_srcc = None
        if len(test_ids) >= 2:
            try:
                report = evaluation.evaluate(checkpoint, bundle, split="test")
                test_plcc, test_srcc = report.plcc, report.srcc
            except ValidationError:
                pass  # degenerate test series; leave metrics unset
        history.append(EpochRecord(epoch=epoch, lr=lr, l1=means[0], intra=means[1],
                                   inter=means[2], total=means[3],
                                   test_plcc=test_plcc, test_srcc=test_srcc))
        if (config.checkpoint_policy == "best-srcc" and test_srcc is not None
                and test_srcc > best_srcc):
            best_srcc = test_srcc
            best_params = params.copy()

    if config.checkpoint_policy == "best-srcc" and best_params is not None:
        checkpoint = replace(checkpoint, params=best_params)
    return checkpoint, history
