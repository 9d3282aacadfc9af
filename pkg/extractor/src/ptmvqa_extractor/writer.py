"""Writers for the feature-file format and manifest consumed by the
downstream training package.

Feature file layout (little-endian): magic "PTMF" | version u16=1 | dim u32 |
entry count u64 | model_id (u16 length + UTF-8) | index records of video_id
(u16 length + UTF-8), view_index u32, payload offset u64 (relative to the
payload section, entries contiguous in index order) | payload of dim float32
per entry.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PTMF"
VERSION = 1


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def write_feature_file(model_id: str, dim: int,
                       entries: dict[tuple[str, int], np.ndarray], path) -> None:
    keys = sorted(entries)
    header = bytearray()
    header += MAGIC
    header += struct.pack("<H", VERSION)
    header += struct.pack("<I", dim)
    header += struct.pack("<Q", len(keys))
    header += _pack_str(model_id)

    index = bytearray()
    payload = bytearray()
    for i, (video_id, view_index) in enumerate(keys):
        vec = np.asarray(entries[(video_id, view_index)], dtype="<f4")
        if vec.shape != (dim,):
            raise ValueError(
                f"entry ({video_id}, {view_index}) has shape {vec.shape}, "
                f"expected ({dim},)")
        if not np.isfinite(vec).all():
            raise ValueError(
                f"entry ({video_id}, {view_index}) contains non-finite values")
        index += _pack_str(video_id)
        index += struct.pack("<I", view_index)
        index += struct.pack("<Q", i * dim * 4)
        payload += vec.tobytes()
    Path(path).write_bytes(bytes(header) + bytes(index) + bytes(payload))


def write_labels_csv(labels: dict[str, float], path) -> None:
    lines = ["video_id,mos"]
    for video_id in sorted(labels):
        lines.append(f"{video_id},{labels[video_id]!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_manifest(path, name: str, labels_path: str,
                   models: list[dict]) -> None:
    doc = {"name": name, "labels": labels_path, "models": models}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
