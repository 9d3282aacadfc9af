"""Feature tables, the on-disk feature file format, manifests, splits, and
the synthetic dataset generator.

Feature file layout (all integers little-endian):

    magic "PTMF" | version u16 | dim u32 | entry count u64
    model_id: u16 byte-length + UTF-8
    index, one record per entry in (video_id, view_index) order:
        video_id u16 byte-length + UTF-8 | view_index u32 | payload offset u64
    payload: dim float32 little-endian per entry, contiguous in index order

Payload offsets are relative to the start of the payload section, so entry i
sits at offset i * dim * 4. Stored values are float32; everything is widened
to float64 in memory. Vectors are one per (video, view); frame-level
averaging, if any, happens upstream in the extractor.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .validation import ValidationError, check_mos_range, require

MAGIC = b"PTMF"
FORMAT_VERSION = 1


class FeatureFileError(ValidationError):
    """Malformed feature file: bad magic, bad version, truncation, or count mismatch."""


@dataclass
class FeatureTable:
    """Dense per-(video, view) feature vectors for one model."""

    model_id: str
    dim: int
    entries: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)

    def validate(self) -> None:
        require(bool(self.model_id), "model_id must be nonempty")
        require(self.dim > 0, f"dim must be positive, got {self.dim}")
        for (video_id, view_index), vec in self.entries.items():
            require(isinstance(video_id, str) and video_id != "",
                    "video_id keys must be nonempty strings")
            require(int(view_index) >= 0, f"view_index must be >= 0, got {view_index}")
            arr = np.asarray(vec)
            require(arr.shape == (self.dim,),
                    f"entry ({video_id}, {view_index}) has length {arr.shape}, expected ({self.dim},)")
            require(bool(np.isfinite(arr).all()),
                    f"entry ({video_id}, {view_index}) contains non-finite values")

    def video_ids(self) -> list[str]:
        return sorted({video for video, _ in self.entries})

    def views_of(self, video_id: str) -> list[int]:
        return sorted(view for video, view in self.entries if video == video_id)

    def video_mean(self, video_id: str) -> np.ndarray:
        """Per-video representation: mean over the video's views."""
        views = self.views_of(video_id)
        require(bool(views), f"video {video_id!r} not present in table {self.model_id!r}")
        return np.mean([self.entries[(video_id, v)] for v in views], axis=0)


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise FeatureFileError(f"string too long for format: {text[:32]!r}...")
    return struct.pack("<H", len(raw)) + raw


class _Cursor:
    def __init__(self, data: bytes, context: str):
        self.data = data
        self.pos = 0
        self.context = context

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FeatureFileError(f"truncated {self.context}: unexpected end of file in {what}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def string(self, what: str) -> str:
        length = self.u16(what)
        return self.take(length, what).decode("utf-8")


def write_feature_file(table: FeatureTable, path) -> None:
    """Serialize a validated table; round-trips bit-exactly through read_feature_file
    for values representable in float32."""
    table.validate()
    keys = sorted(table.entries)
    record_bytes = table.dim * 4

    header = bytearray()
    header += MAGIC
    header += struct.pack("<H", FORMAT_VERSION)
    header += struct.pack("<I", table.dim)
    header += struct.pack("<Q", len(keys))
    header += _pack_str(table.model_id)

    index = bytearray()
    payload = bytearray()
    for i, (video_id, view_index) in enumerate(keys):
        index += _pack_str(video_id)
        index += struct.pack("<I", int(view_index))
        index += struct.pack("<Q", i * record_bytes)
        payload += np.asarray(table.entries[(video_id, view_index)],
                              dtype="<f4").tobytes()

    Path(path).write_bytes(bytes(header) + bytes(index) + bytes(payload))


def read_feature_file(path) -> FeatureTable:
    data = Path(path).read_bytes()
    cur = _Cursor(data, "header")
    magic = cur.take(4, "magic")
    if magic != MAGIC:
        raise FeatureFileError(f"bad magic {magic!r} in {path}")
    version = cur.u16("version")
    if version != FORMAT_VERSION:
        raise FeatureFileError(f"unsupported format version {version} in {path}")
    dim = cur.u32("dim")
    count = cur.u64("entry count")
    model_id = cur.string("model_id")

    cur.context = "index"
    keys: list[tuple[str, int]] = []
    seen: set[tuple[str, int]] = set()
    for i in range(count):
        video_id = cur.string("video_id")
        view_index = cur.u32("view_index")
        offset = cur.u64("payload offset")
        if offset != i * dim * 4:
            raise FeatureFileError(
                f"entry count/offset mismatch at index {i}: offset {offset}, expected {i * dim * 4}")
        key = (video_id, view_index)
        if key in seen:
            raise FeatureFileError(f"duplicate entry {key} in index")
        seen.add(key)
        keys.append(key)

    payload = data[cur.pos:]
    expected = count * dim * 4
    if len(payload) < expected:
        raise FeatureFileError(
            f"truncated payload: {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise FeatureFileError(
            f"declared entry count mismatch: {len(payload) - expected} trailing bytes "
            f"beyond {count} declared entries")

    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    entries = {key: flat[i * dim:(i + 1) * dim] for i, key in enumerate(keys)}
    table = FeatureTable(model_id=model_id, dim=dim, entries=entries)
    table.validate()
    return table


@dataclass
class MosLabels:
    """Mean-opinion-score labels, one per video, on the 1.0-5.0 scale."""

    entries: dict[str, float]

    def validate(self) -> None:
        require(bool(self.entries), "labels must be nonempty")
        check_mos_range(list(self.entries.values()))

    def video_ids(self) -> list[str]:
        return sorted(self.entries)


def write_labels_file(labels: MosLabels, path) -> None:
    labels.validate()
    lines = ["video_id,mos"]
    for video_id in labels.video_ids():
        lines.append(f"{video_id},{labels.entries[video_id]!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_labels_file(path) -> MosLabels:
    entries: dict[str, float] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        require(len(parts) == 2, f"labels line {lineno}: expected 'video_id,mos', got {line!r}")
        video_id, raw = parts[0].strip(), parts[1].strip()
        try:
            mos = float(raw)
        except ValueError:
            if lineno == 1:  # optional header
                continue
            raise ValidationError(f"labels line {lineno}: {raw!r} is not a number")
        require(video_id not in entries, f"duplicate label for video {video_id!r}")
        entries[video_id] = mos
    labels = MosLabels(entries)
    labels.validate()
    return labels


@dataclass
class DatasetBundle:
    """Aligned feature tables for N models plus labels and an optional split."""

    tables: list[FeatureTable]
    labels: MosLabels
    split: dict[str, str] = field(default_factory=dict)
    name: str = ""
    manifest_dbi: dict[str, float] = field(default_factory=dict)

    def validate(self) -> None:
        require(bool(self.tables), "bundle needs at least one feature table")
        self.labels.validate()
        label_ids = set(self.labels.entries)
        for table in self.tables:
            table.validate()
            table_ids = set(table.video_ids())
            missing = sorted(label_ids - table_ids)
            extra = sorted(table_ids - label_ids)
            require(not missing,
                    f"model {table.model_id!r} is missing videos: {missing[:10]}")
            require(not extra,
                    f"model {table.model_id!r} has videos without labels: {extra[:10]}")
        first = self.tables[0]
        for video_id in label_ids:
            views = first.views_of(video_id)
            for table in self.tables[1:]:
                require(table.views_of(video_id) == views,
                        f"view sets differ for video {video_id!r} between models "
                        f"{first.model_id!r} and {table.model_id!r}")
        for video_id, side in self.split.items():
            require(side in ("train", "test"),
                    f"split value for {video_id!r} must be 'train' or 'test', got {side!r}")
            require(video_id in label_ids, f"split references unknown video {video_id!r}")

    def model_ids(self) -> list[str]:
        return [t.model_id for t in self.tables]

    def dims(self) -> list[int]:
        return [t.dim for t in self.tables]

    def videos(self, split: str | None = None) -> list[str]:
        ids = self.labels.video_ids()
        if split is None:
            return ids
        require(split in ("train", "test"), f"split filter must be 'train' or 'test', got {split!r}")
        return [v for v in ids if self.split.get(v) == split]


def write_manifest(path, *, name: str, labels_path: str, models: list[dict]) -> None:
    """Models entries: {"model_id": ..., "path": ..., "dbi": optional float}.
    Paths are stored as given (normally relative to the manifest)."""
    doc = {"name": name, "labels": labels_path, "models": models}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_dataset(manifest_path) -> DatasetBundle:
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest {manifest_path} is not valid JSON: {exc}")
    require(isinstance(doc, dict), "manifest must be a JSON object")
    models = doc.get("models")
    require(isinstance(models, list) and len(models) >= 1,
            "manifest must list at least one model")
    require("labels" in doc, "manifest must name a labels file")

    base = manifest_path.parent
    labels = read_labels_file(base / doc["labels"])

    tables: list[FeatureTable] = []
    manifest_dbi: dict[str, float] = {}
    for entry in models:
        require(isinstance(entry, dict) and "model_id" in entry and "path" in entry,
                "each manifest model needs model_id and path")
        table = read_feature_file(base / entry["path"])
        require(table.model_id == entry["model_id"],
                f"manifest names model {entry['model_id']!r} but file {entry['path']!r} "
                f"contains {table.model_id!r}")
        tables.append(table)
        if "dbi" in entry and entry["dbi"] is not None:
            manifest_dbi[table.model_id] = float(entry["dbi"])

    bundle = DatasetBundle(tables=tables, labels=labels,
                           name=str(doc.get("name", manifest_path.stem)),
                           manifest_dbi=manifest_dbi)
    bundle.validate()
    return bundle


def split_dataset(bundle: DatasetBundle, train_fraction: float, seed: int) -> DatasetBundle:
    """Random train/test partition, deterministic per seed.
    |train| = round(train_fraction * n)."""
    require(0.0 < train_fraction < 1.0,
            f"train_fraction must lie in (0, 1), got {train_fraction}")
    videos = bundle.labels.video_ids()
    require(len(videos) >= 2, "need at least 2 videos to split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(videos))
    n_train = int(round(train_fraction * len(videos)))
    train_ids = {videos[i] for i in order[:n_train]}
    split = {v: ("train" if v in train_ids else "test") for v in videos}
    return DatasetBundle(tables=bundle.tables, labels=bundle.labels, split=split,
                         name=bundle.name, manifest_dbi=dict(bundle.manifest_dbi))


@dataclass
class SyntheticSpec:
    """Controls the synthetic generator.

    Each video gets a latent quality q ~ uniform[1, 5] which becomes its MOS.
    Model n's vector for every view is signal_strength[n] * q * u_n plus
    isotropic gaussian noise, where u_n is a fixed unit direction. A model
    with signal_strength 0 carries pure noise. direction_seed lets two
    datasets share signal directions (cross-dataset scenarios).
    """

    n_videos: int
    n_models: int
    dims: list[int]
    views_per_video: int = 1
    signal_strength: list[float] | None = None
    noise_sigma: float = 0.05
    seed: int = 0
    direction_seed: int | None = None

    def validate(self) -> None:
        require(self.n_videos >= 4, f"n_videos must be >= 4, got {self.n_videos}")
        require(self.n_models >= 1, f"n_models must be >= 1, got {self.n_models}")
        require(len(self.dims) == self.n_models,
                f"dims has {len(self.dims)} entries for {self.n_models} models")
        require(all(d > 0 for d in self.dims), "all dims must be positive")
        require(self.views_per_video >= 1, "views_per_video must be >= 1")
        strengths = self.resolved_signal()
        require(len(strengths) == self.n_models,
                f"signal_strength has {len(strengths)} entries for {self.n_models} models")
        require(all(s >= 0 for s in strengths), "signal_strength entries must be >= 0")
        require(self.noise_sigma >= 0, "noise_sigma must be >= 0")

    def resolved_signal(self) -> list[float]:
        if self.signal_strength is None:
            return [1.0] + [0.0] * (self.n_models - 1)
        return list(self.signal_strength)


def gen_synthetic(spec: SyntheticSpec) -> DatasetBundle:
    """Deterministic synthetic bundle with a linearly recoverable quality signal.

    Values are quantized to float32 precision so in-memory bundles match
    write/read round trips bit for bit.
    """
    spec.validate()
    strengths = spec.resolved_signal()
    dseed = spec.seed if spec.direction_seed is None else spec.direction_seed

    video_ids = [f"v{i:05d}" for i in range(spec.n_videos)]
    qualities = np.random.default_rng([spec.seed, 0]).uniform(1.0, 5.0, spec.n_videos)
    labels = MosLabels({vid: float(q) for vid, q in zip(video_ids, qualities)})

    tables = []
    for n in range(spec.n_models):
        dim = spec.dims[n]
        direction = np.random.default_rng([dseed, 1, n]).normal(size=dim)
        direction /= np.linalg.norm(direction)
        noise_rng = np.random.default_rng([spec.seed, 2, n])
        entries: dict[tuple[str, int], np.ndarray] = {}
        for i, vid in enumerate(video_ids):
            base = strengths[n] * qualities[i] * direction
            for view in range(spec.views_per_video):
                vec = base + spec.noise_sigma * noise_rng.normal(size=dim)
                entries[(vid, view)] = vec.astype(np.float32).astype(np.float64)
        tables.append(FeatureTable(model_id=f"m{n:02d}", dim=dim, entries=entries))

    bundle = DatasetBundle(tables=tables, labels=labels, name=f"synthetic-{spec.seed}")
    bundle.validate()
    return bundle
