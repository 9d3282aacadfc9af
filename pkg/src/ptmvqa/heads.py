"""The learnable network over frozen features: one small transform head per
model, weighted fusion into a shared space, and a linear regression head.

Each head is FC -> layer norm -> GELU -> FC -> layer norm -> GELU, mapping a
model's native feature width to the shared embedding width. Forward passes
cache enough intermediates for an exact analytic backward pass; the raw
input features never receive a gradient.

Checkpoint file layout (integers and floats little-endian):

    magic "PTMC" | version u16 | embed_dim u32 | hidden_dim u32
    n_models u32 | n_intervals u32 | intervals: 2 float64 per interval
    weights: float64 per model | source dataset name (u16 length + UTF-8)
    per model: model_id (u16 length + UTF-8) | dim u32 |
        w1, b1, gain1, bias1, w2, b2, gain2, bias2 as raw float64
    w_out: float64 * embed_dim | b_out float64
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.special import erf

from .clustering import ClusterSpec
from .validation import ValidationError, require

LN_EPS = 1e-5
CHECKPOINT_MAGIC = b"PTMC"
CHECKPOINT_VERSION = 1

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (Gaussian CDF) GELU."""
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return cdf + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    """Normalize over the feature dimension. Returns (output, cache).
    Zero variance yields exactly the bias vector."""
    mu = x.mean()
    var = x.var()
    inv_std = 1.0 / math.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv_std
    return gain * xhat + bias, (xhat, inv_std)


def layer_norm_backward(dout: np.ndarray, gain: np.ndarray, cache):
    xhat, inv_std = cache
    dgain = dout * xhat
    dbias = dout.copy()
    dxhat = dout * gain
    dx = inv_std * (dxhat - dxhat.mean() - xhat * (dxhat * xhat).mean())
    return dx, dgain, dbias


@dataclass
class TransformHead:
    w1: np.ndarray      # (hidden_dim, dim)
    b1: np.ndarray      # (hidden_dim,)
    gain1: np.ndarray
    bias1: np.ndarray
    w2: np.ndarray      # (embed_dim, hidden_dim)
    b2: np.ndarray      # (embed_dim,)
    gain2: np.ndarray
    bias2: np.ndarray

    @property
    def dim(self) -> int:
        return self.w1.shape[1]


@dataclass
class HeadParams:
    """All trainable state: per-model heads plus the shared regression head."""

    heads: list[TransformHead]
    w_out: np.ndarray   # (embed_dim,)
    b_out: np.ndarray   # () scalar

    @property
    def dims(self) -> list[int]:
        return [h.dim for h in self.heads]

    @property
    def embed_dim(self) -> int:
        return self.w_out.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.heads[0].w1.shape[0]

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        for n, head in enumerate(self.heads):
            for name in ("w1", "b1", "gain1", "bias1", "w2", "b2", "gain2", "bias2"):
                yield f"head{n}.{name}", getattr(head, name)
        yield "w_out", self.w_out
        yield "b_out", self.b_out

    def copy(self) -> "HeadParams":
        return HeadParams(
            heads=[TransformHead(**{f: getattr(h, f).copy() for f in
                                    ("w1", "b1", "gain1", "bias1",
                                     "w2", "b2", "gain2", "bias2")})
                   for h in self.heads],
            w_out=self.w_out.copy(),
            b_out=self.b_out.copy(),
        )

    def validate(self) -> None:
        require(bool(self.heads), "need at least one head")
        embed, hidden = self.embed_dim, self.hidden_dim
        for n, h in enumerate(self.heads):
            require(h.w1.shape == (hidden, h.dim), f"head {n}: bad w1 shape {h.w1.shape}")
            for name, expect in (("b1", (hidden,)), ("gain1", (hidden,)), ("bias1", (hidden,)),
                                 ("w2", (embed, hidden)), ("b2", (embed,)),
                                 ("gain2", (embed,)), ("bias2", (embed,))):
                require(getattr(h, name).shape == expect,
                        f"head {n}: bad {name} shape {getattr(h, name).shape}")
        require(self.b_out.shape == (), "b_out must be a scalar array")
        for name, arr in self.named_arrays():
            require(bool(np.isfinite(arr).all()), f"{name} contains non-finite values")


def _xavier(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_heads(dims: Sequence[int], embed_dim: int, hidden_dim: int, seed: int) -> HeadParams:
    """Uniform Xavier weights, zero biases, unit norm gains; deterministic per seed."""
    require(len(dims) >= 1 and all(d > 0 for d in dims), "dims must be positive")
    require(embed_dim > 0 and hidden_dim > 0, "embed_dim and hidden_dim must be positive")
    rng = np.random.default_rng(seed)
    heads = []
    for dim in dims:
        heads.append(TransformHead(
            w1=_xavier(rng, hidden_dim, dim),
            b1=np.zeros(hidden_dim),
            gain1=np.ones(hidden_dim),
            bias1=np.zeros(hidden_dim),
            w2=_xavier(rng, embed_dim, hidden_dim),
            b2=np.zeros(embed_dim),
            gain2=np.ones(embed_dim),
            bias2=np.zeros(embed_dim),
        ))
    w_out = _xavier(rng, 1, embed_dim)[0]
    return HeadParams(heads=heads, w_out=w_out, b_out=np.zeros(()))


@dataclass
class HeadTrace:
    features: np.ndarray
    x1: np.ndarray
    ln1_cache: tuple
    n1: np.ndarray
    a1: np.ndarray
    x2: np.ndarray
    ln2_cache: tuple
    n2: np.ndarray
    out: np.ndarray


@dataclass
class SampleTrace:
    head_traces: list[HeadTrace]
    transformed: list[np.ndarray]
    weights: np.ndarray
    fused: np.ndarray
    score: float


def transform_forward(head: TransformHead, features: np.ndarray):
    """Map one model's raw feature vector into the shared embedding space."""
    features = np.asarray(features, dtype=np.float64)
    require(features.shape == (head.dim,),
            f"feature length {features.shape} does not match head dim {head.dim}")
    x1 = head.w1 @ features + head.b1
    n1, ln1_cache = layer_norm(x1, head.gain1, head.bias1)
    a1 = gelu(n1)
    x2 = head.w2 @ a1 + head.b2
    n2, ln2_cache = layer_norm(x2, head.gain2, head.bias2)
    out = gelu(n2)
    trace = HeadTrace(features=features, x1=x1, ln1_cache=ln1_cache, n1=n1,
                      a1=a1, x2=x2, ln2_cache=ln2_cache, n2=n2, out=out)
    return out, trace


def aggregate(transformed: Sequence[np.ndarray], weights) -> np.ndarray:
    """Weighted fusion: sum(w_n * f_n) / sum(w_n). Invariant to a common
    rescaling of the weights."""
    weights = np.asarray(weights, dtype=np.float64)
    require(len(transformed) >= 1, "need at least one transformed feature")
    require(weights.shape == (len(transformed),),
            f"{len(transformed)} features but {weights.shape} weights")
    require(bool((weights > 0).all()), "weights must be positive")
    stacked = np.stack(transformed)
    return (weights[:, None] * stacked).sum(axis=0) / weights.sum()


def predict(params: HeadParams, features_per_model: Sequence[np.ndarray], weights):
    """Full forward pass for one sample. Returns (score, trace)."""
    require(len(features_per_model) == len(params.heads),
            f"{len(features_per_model)} feature vectors for {len(params.heads)} heads")
    transformed = []
    head_traces = []
    for head, feats in zip(params.heads, features_per_model):
        out, trace = transform_forward(head, feats)
        transformed.append(out)
        head_traces.append(trace)
    weights = np.asarray(weights, dtype=np.float64)
    fused = aggregate(transformed, weights)
    score = float(params.w_out @ fused + params.b_out)
    return score, SampleTrace(head_traces=head_traces, transformed=transformed,
                              weights=weights, fused=fused, score=score)


def zero_grads(params: HeadParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.named_arrays()}


def _head_backward(head: TransformHead, trace: HeadTrace, dout: np.ndarray,
                   grads: dict[str, np.ndarray], prefix: str) -> None:
    dn2 = dout * gelu_grad(trace.n2)
    dx2, dgain2, dbias2 = layer_norm_backward(dn2, head.gain2, trace.ln2_cache)
    grads[f"{prefix}.gain2"] += dgain2
    grads[f"{prefix}.bias2"] += dbias2
    grads[f"{prefix}.w2"] += np.outer(dx2, trace.a1)
    grads[f"{prefix}.b2"] += dx2
    da1 = head.w2.T @ dx2
    dn1 = da1 * gelu_grad(trace.n1)
    dx1, dgain1, dbias1 = layer_norm_backward(dn1, head.gain1, trace.ln1_cache)
    grads[f"{prefix}.gain1"] += dgain1
    grads[f"{prefix}.bias1"] += dbias1
    grads[f"{prefix}.w1"] += np.outer(dx1, trace.features)
    grads[f"{prefix}.b1"] += dx1
    # input features are frozen: no gradient propagates past w1


def backward(params: HeadParams,
             traces: Sequence[SampleTrace],
             dscore: np.ndarray,
             dfused: np.ndarray | None = None,
             dtransformed: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Exact gradients of the batch loss w.r.t. every parameter.

    dscore is (B,); dfused, if given, is (B, embed_dim) of direct gradients
    at the fused vectors; dtransformed, if given, is (B, N, embed_dim) of
    direct gradients at the per-model transformed features. All three routes
    are summed, matching a loss of the form
    L(score, fused, transformed).
    """
    batch = len(traces)
    dscore = np.asarray(dscore, dtype=np.float64)
    require(dscore.shape == (batch,), f"dscore must have shape ({batch},)")
    grads = zero_grads(params)
    n_models = len(params.heads)
    weight_sum_cache: dict[int, np.ndarray] = {}

    for i, trace in enumerate(traces):
        require(len(trace.head_traces) == n_models, "trace/params mismatch")
        dh = dscore[i] * params.w_out
        if dfused is not None:
            dh = dh + dfused[i]
        grads["w_out"] += dscore[i] * trace.fused
        grads["b_out"] += dscore[i]
        key = id(trace.weights)
        if key not in weight_sum_cache:
            weight_sum_cache[key] = trace.weights / trace.weights.sum()
        coeffs = weight_sum_cache[key]
        for n in range(n_models):
            df = coeffs[n] * dh
            if dtransformed is not None:
                df = df + dtransformed[i, n]
            _head_backward(params.heads[n], trace.head_traces[n], df, grads, f"head{n}")
    return grads


@dataclass
class Checkpoint:
    """Everything needed to run inference without the training manifest."""

    params: HeadParams
    model_ids: list[str]
    weights: np.ndarray
    cluster_spec: ClusterSpec
    source_dataset: str = ""

    def validate(self) -> None:
        self.params.validate()
        require(len(self.model_ids) == len(self.params.heads),
                "one model_id per head required")
        require(self.weights.shape == (len(self.model_ids),),
                "one weight per model required")
        require(bool((self.weights > 0).all()), "weights must be positive")


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    checkpoint.validate()
    params = checkpoint.params
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<H", CHECKPOINT_VERSION)
    buf += struct.pack("<I", params.embed_dim)
    buf += struct.pack("<I", params.hidden_dim)
    buf += struct.pack("<I", len(params.heads))
    buf += struct.pack("<I", checkpoint.cluster_spec.k)
    for lo, hi in checkpoint.cluster_spec.intervals:
        buf += struct.pack("<dd", lo, hi)
    buf += np.asarray(checkpoint.weights, dtype="<f8").tobytes()
    buf += _pack_str(checkpoint.source_dataset)
    for model_id, head in zip(checkpoint.model_ids, params.heads):
        buf += _pack_str(model_id)
        buf += struct.pack("<I", head.dim)
        for name in ("w1", "b1", "gain1", "bias1", "w2", "b2", "gain2", "bias2"):
            buf += np.ascontiguousarray(getattr(head, name), dtype="<f8").tobytes()
    buf += np.asarray(params.w_out, dtype="<f8").tobytes()
    buf += struct.pack("<d", float(params.b_out))
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise ValidationError(f"truncated checkpoint file {path}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    def floats(count: int, shape) -> np.ndarray:
        return np.frombuffer(take(count * 8), dtype="<f8").reshape(shape).copy()

    if take(4) != CHECKPOINT_MAGIC:
        raise ValidationError(f"bad checkpoint magic in {path}")
    version = struct.unpack("<H", take(2))[0]
    if version != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    embed_dim, hidden_dim, n_models, k = struct.unpack("<IIII", take(16))
    intervals = tuple(struct.unpack("<dd", take(16)) for _ in range(k))
    weights = floats(n_models, (n_models,))
    name_len = struct.unpack("<H", take(2))[0]
    source = take(name_len).decode("utf-8")

    model_ids = []
    heads = []
    for _ in range(n_models):
        id_len = struct.unpack("<H", take(2))[0]
        model_ids.append(take(id_len).decode("utf-8"))
        dim = struct.unpack("<I", take(4))[0]
        heads.append(TransformHead(
            w1=floats(hidden_dim * dim, (hidden_dim, dim)),
            b1=floats(hidden_dim, (hidden_dim,)),
            gain1=floats(hidden_dim, (hidden_dim,)),
            bias1=floats(hidden_dim, (hidden_dim,)),
            w2=floats(embed_dim * hidden_dim, (embed_dim, hidden_dim)),
            b2=floats(embed_dim, (embed_dim,)),
            gain2=floats(embed_dim, (embed_dim,)),
            bias2=floats(embed_dim, (embed_dim,)),
        ))
    w_out = floats(embed_dim, (embed_dim,))
    b_out = np.array(struct.unpack("<d", take(8))[0])
    if pos != len(data):
        raise ValidationError(f"trailing bytes in checkpoint file {path}")

    checkpoint = Checkpoint(
        params=HeadParams(heads=heads, w_out=w_out, b_out=b_out),
        model_ids=model_ids,
        weights=weights,
        cluster_spec=ClusterSpec(intervals),
        source_dataset=source,
    )
    checkpoint.validate()
    return checkpoint
