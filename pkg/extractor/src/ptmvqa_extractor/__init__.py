"""Feature extraction from videos with frozen pretrained backbones, writing
the feature files, labels, and manifest consumed by the ptmvqa trainer."""

from .backbones import (BackboneUnavailable, ClipBackbone, FrameBackbone,
                        available_models, load_backbone, register)
from .extract import ExtractConfig, ExtractError, ExtractResult, extract
from .video import (VideoError, center_crop, clip_frame_indices, decode_video,
                    extract_views, five_crops, resize_shorter_side)
from .writer import write_feature_file, write_labels_csv, write_manifest

__version__ = "0.1.0"

__all__ = [
    "BackboneUnavailable", "ClipBackbone", "ExtractConfig", "ExtractError",
    "ExtractResult", "FrameBackbone", "VideoError", "available_models",
    "center_crop", "clip_frame_indices", "decode_video", "extract",
    "extract_views", "five_crops", "load_backbone", "register",
    "resize_shorter_side", "write_feature_file", "write_labels_csv",
    "write_manifest",
]
