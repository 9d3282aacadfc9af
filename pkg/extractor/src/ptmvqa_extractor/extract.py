"""Extraction pipeline: videos + labels CSV in, feature files + manifest out."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbones import BackboneUnavailable, load_backbone
from .video import VideoError, decode_video, extract_views
from .writer import write_feature_file, write_labels_csv, write_manifest

VIDEO_SUFFIXES = (".mp4", ".avi", ".mkv", ".mov", ".webm")
VIEW_MODES = ("single-center", "four-by-five")


class ExtractError(RuntimeError):
    pass


@dataclass
class ExtractConfig:
    models: list[str]
    frames_per_clip: int = 16
    frame_interval: int = 2
    view_mode: str = "single-center"
    crop_size: int = 224
    dataset_name: str = "extracted"

    def validate(self) -> None:
        if not self.models:
            raise ExtractError("no models requested")
        if self.frames_per_clip < 1 or self.frame_interval < 1:
            raise ExtractError("frames_per_clip and frame_interval must be >= 1")
        if self.view_mode not in VIEW_MODES:
            raise ExtractError(f"view_mode must be one of {VIEW_MODES}")
        if self.crop_size < 1:
            raise ExtractError("crop_size must be positive")


@dataclass
class ExtractResult:
    manifest_path: Path
    extracted: list[str]
    failed: list[str]
    skipped_models: list[str] = field(default_factory=list)


def read_labels_csv(path) -> dict[str, float]:
    labels: dict[str, float] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        video_id, _, raw = line.partition(",")
        try:
            labels[video_id.strip()] = float(raw)
        except ValueError:
            if lineno == 1:
                continue  # header
            raise ExtractError(f"labels line {lineno}: {raw!r} is not a number")
    if not labels:
        raise ExtractError(f"no labels found in {path}")
    return labels


def _embed_view(backbone, view: np.ndarray) -> np.ndarray:
    if backbone.kind == "frame":
        return backbone.embed_frames(view).mean(axis=0)
    return backbone.embed_clip(view)


def extract(video_dir, labels_path, config: ExtractConfig, out_dir) -> ExtractResult:
    """Run every resolvable backbone over every labeled, decodable video and
    write the dataset (feature files + labels + manifest) into out_dir."""
    config.validate()
    video_dir = Path(video_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    backbones = []
    skipped = []
    for name in config.models:
        try:
            backbones.append(load_backbone(name))
        except BackboneUnavailable as exc:
            skipped.append(name)
            warnings.warn(f"skipping backbone: {exc}", RuntimeWarning,
                          stacklevel=2)
    if not backbones:
        raise ExtractError("none of the requested backbones could be loaded")

    labels = read_labels_csv(labels_path)
    candidates = sorted(p for p in video_dir.iterdir()
                        if p.suffix.lower() in VIDEO_SUFFIXES)
    if not candidates:
        raise ExtractError(f"no video files under {video_dir}")

    tables = {b.name: {} for b in backbones}
    extracted, failed = [], []
    for path in candidates:
        video_id = path.stem
        if video_id not in labels:
            warnings.warn(f"video {video_id!r} has no label; skipped",
                          RuntimeWarning, stacklevel=2)
            continue
        try:
            frames = decode_video(path)
            views = extract_views(frames, config.frames_per_clip,
                                  config.frame_interval, config.view_mode,
                                  config.crop_size)
        except VideoError as exc:
            failed.append(video_id)
            warnings.warn(f"cannot extract {video_id!r}: {exc}",
                          RuntimeWarning, stacklevel=2)
            continue
        for backbone in backbones:
            for view_index, view in enumerate(views):
                vec = np.asarray(_embed_view(backbone, view), dtype=np.float64)
                if vec.shape != (backbone.embed_dim,):
                    raise ExtractError(
                        f"backbone {backbone.name!r} produced shape {vec.shape}, "
                        f"declared embed_dim {backbone.embed_dim}")
                tables[backbone.name][(video_id, view_index)] = vec
        extracted.append(video_id)

    if not extracted:
        raise ExtractError(
            f"all {len(failed)} candidate videos failed to decode")

    model_entries = []
    for backbone in backbones:
        fname = f"{backbone.name}.ptmf"
        write_feature_file(backbone.name, backbone.embed_dim,
                           tables[backbone.name], out_dir / fname)
        model_entries.append({"model_id": backbone.name, "path": fname})
    write_labels_csv({v: labels[v] for v in extracted}, out_dir / "labels.csv")
    manifest_path = out_dir / "manifest.json"
    write_manifest(manifest_path, config.dataset_name, "labels.csv",
                   model_entries)
    return ExtractResult(manifest_path=manifest_path, extracted=extracted,
                         failed=failed, skipped_models=skipped)
