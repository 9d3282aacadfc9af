"""Video decoding, uniform temporal clip sampling, and spatial cropping.

A view is one (clip, crop) combination. Evaluation extraction uses 4 clips
sampled uniformly over the video, each cropped at the four corners and the
center of the resized frames (view index = clip * 5 + crop, crop order
TL, TR, BL, BR, center). Training-style extraction uses a single clip with
one center crop.
"""

from __future__ import annotations

import numpy as np

try:
    import cv2
except ImportError:  # pragma: no cover - opencv is a hard dependency
    cv2 = None


class VideoError(RuntimeError):
    """A video could not be decoded."""


def decode_video(path) -> np.ndarray:
    """All frames as (T, H, W, 3) uint8 RGB."""
    if cv2 is None:
        raise VideoError("opencv is required to decode videos")
    cap = cv2.VideoCapture(str(path))
    frames = []
    try:
        if not cap.isOpened():
            raise VideoError(f"cannot open video {path}")
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            frames.append(cv2.cvtColor(frame, cv2.COLOR_BGR2RGB))
    finally:
        cap.release()
    if not frames:
        raise VideoError(f"no decodable frames in {path}")
    return np.stack(frames)


def clip_frame_indices(total_frames: int, frames_per_clip: int,
                       frame_interval: int, n_clips: int) -> list[np.ndarray]:
    """Frame indices for n_clips clips spread uniformly over the video.

    Each clip takes frames_per_clip frames spaced frame_interval apart from
    its start; indices are clamped to the final frame for short videos.
    """
    if total_frames < 1:
        raise VideoError("video has no frames")
    span = (frames_per_clip - 1) * frame_interval
    last_start = max(total_frames - 1 - span, 0)
    starts = np.round(np.linspace(0.0, last_start, n_clips)).astype(int)
    return [np.minimum(start + np.arange(frames_per_clip) * frame_interval,
                       total_frames - 1)
            for start in starts]


def resize_shorter_side(frames: np.ndarray, size: int) -> np.ndarray:
    """Resize every frame so its shorter side equals `size`."""
    _, h, w, _ = frames.shape
    if min(h, w) == size:
        return frames
    scale = size / min(h, w)
    new_w, new_h = max(int(round(w * scale)), size), max(int(round(h * scale)), size)
    return np.stack([cv2.resize(f, (new_w, new_h), interpolation=cv2.INTER_AREA)
                     for f in frames])


def five_crops(frames: np.ndarray, crop: int) -> list[np.ndarray]:
    """Four corner crops plus the center crop: TL, TR, BL, BR, center."""
    _, h, w, _ = frames.shape
    if h < crop or w < crop:
        raise VideoError(f"frames {h}x{w} smaller than crop {crop}")
    cy, cx = (h - crop) // 2, (w - crop) // 2
    offsets = [(0, 0), (0, w - crop), (h - crop, 0), (h - crop, w - crop),
               (cy, cx)]
    return [frames[:, y:y + crop, x:x + crop, :] for y, x in offsets]


def center_crop(frames: np.ndarray, crop: int) -> np.ndarray:
    _, h, w, _ = frames.shape
    if h < crop or w < crop:
        raise VideoError(f"frames {h}x{w} smaller than crop {crop}")
    y, x = (h - crop) // 2, (w - crop) // 2
    return frames[:, y:y + crop, x:x + crop, :]


def extract_views(frames: np.ndarray, frames_per_clip: int, frame_interval: int,
                  view_mode: str, crop: int) -> list[np.ndarray]:
    """All views of a video, in view-index order."""
    resized = resize_shorter_side(frames, crop)
    if view_mode == "single-center":
        indices = clip_frame_indices(len(frames), frames_per_clip,
                                     frame_interval, n_clips=1)
        return [center_crop(resized[indices[0]], crop)]
    if view_mode != "four-by-five":
        raise VideoError(f"unknown view mode {view_mode!r}")
    views = []
    for indices in clip_frame_indices(len(frames), frames_per_clip,
                                      frame_interval, n_clips=4):
        views.extend(five_crops(resized[indices], crop))
    return views
