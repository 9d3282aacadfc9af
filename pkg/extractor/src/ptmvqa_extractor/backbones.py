"""Pretrained backbone registry.

A backbone consumes uint8 RGB views and returns embeddings:
frame backbones implement embed_frames (one vector per frame; the extractor
averages them per view), clip backbones implement embed_clip (one vector per
view). Loaders for the publicly available torchvision backbones are
registered by name; models whose weights cannot be loaded in the current
environment raise BackboneUnavailable and are skipped with a warning rather
than silently substituted, since substitution would invalidate model-score
comparisons. Custom backbones can be registered with register().
"""

from __future__ import annotations

import numpy as np


class BackboneUnavailable(RuntimeError):
    """The named backbone (or its pretrained weights) cannot be loaded."""


class FrameBackbone:
    kind = "frame"
    name: str
    embed_dim: int

    def embed_frames(self, frames: np.ndarray) -> np.ndarray:
        """(T, H, W, 3) uint8 -> (T, embed_dim) float."""
        raise NotImplementedError


class ClipBackbone:
    kind = "clip"
    name: str
    embed_dim: int

    def embed_clip(self, frames: np.ndarray) -> np.ndarray:
        """(T, H, W, 3) uint8 -> (embed_dim,) float."""
        raise NotImplementedError


_REGISTRY: dict[str, object] = {}


def register(name: str, loader) -> None:
    if name in _REGISTRY:
        raise ValueError(f"backbone {name!r} is already registered")
    _REGISTRY[name] = loader


def available_models() -> list[str]:
    return sorted(_REGISTRY)


def load_backbone(name: str):
    if name not in _REGISTRY:
        raise BackboneUnavailable(
            f"unknown backbone {name!r}; known: {', '.join(available_models())}")
    return _REGISTRY[name]()


class _TorchvisionFrameBackbone(FrameBackbone):
    def __init__(self, name, model, transforms, embed_dim, torch):
        self.name = name
        self.embed_dim = embed_dim
        self._model = model
        self._transforms = transforms
        self._torch = torch

    def embed_frames(self, frames: np.ndarray) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            batch = torch.from_numpy(frames).permute(0, 3, 1, 2)
            batch = self._transforms(batch)
            return self._model(batch).cpu().numpy().astype(np.float64)


class _TorchvisionClipBackbone(ClipBackbone):
    def __init__(self, name, model, transforms, embed_dim, torch):
        self.name = name
        self.embed_dim = embed_dim
        self._model = model
        self._transforms = transforms
        self._torch = torch

    def embed_clip(self, frames: np.ndarray) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            # (T, H, W, C) -> (1, C, T, H, W) after per-frame preprocessing
            clip = torch.from_numpy(frames).permute(0, 3, 1, 2)
            clip = self._transforms(clip)
            clip = clip.permute(1, 0, 2, 3).unsqueeze(0)
            return self._model(clip)[0].cpu().numpy().astype(np.float64)


def _load_torchvision(name, builder_name, weights_name, strip, embed_dim,
                      video=False):
    try:
        import torch
        import torchvision.models as tvm
    except ImportError as exc:
        raise BackboneUnavailable(f"{name}: torch/torchvision not installed") from exc
    module = tvm.video if video else tvm
    builder = getattr(module, builder_name)
    try:
        weights_enum = getattr(module, weights_name).DEFAULT
        model = builder(weights=weights_enum)
    except Exception as exc:
        raise BackboneUnavailable(
            f"{name}: pretrained weights unavailable ({exc})") from exc
    strip(model)
    model.eval()
    transforms = weights_enum.transforms()
    cls = _TorchvisionClipBackbone if video else _TorchvisionFrameBackbone
    return cls(name, model, transforms, embed_dim, torch)


def _strip_convnext(model):
    import torch.nn as nn
    model.classifier[2] = nn.Identity()


def _strip_head(model):
    import torch.nn as nn
    model.head = nn.Identity()


def _strip_vit(model):
    import torch.nn as nn
    model.heads = nn.Identity()


def _unavailable(name, reason):
    def loader():
        raise BackboneUnavailable(f"{name}: {reason}")
    return loader


register("convnext", lambda: _load_torchvision(
    "convnext", "convnext_base", "ConvNeXt_Base_Weights", _strip_convnext, 1024))
register("swin-b", lambda: _load_torchvision(
    "swin-b", "swin_b", "Swin_B_Weights", _strip_head, 1024))
register("vit-b", lambda: _load_torchvision(
    "vit-b", "vit_b_16", "ViT_B_16_Weights", _strip_vit, 768))
register("video-swin-b", lambda: _load_torchvision(
    "video-swin-b", "swin3d_b", "Swin3D_B_Weights", _strip_head, 1024,
    video=True))

# backbones used in the original selection study but without public
# torchvision weights; listed so the skip warning names them accurately
for _name, _reason in (
        ("mae", "no public torchvision weights; install a MAE checkpoint"),
        ("x3d", "not packaged in torchvision"),
        ("ir-csn-152", "not packaged in torchvision"),
        ("clip", "requires a CLIP package with pretrained weights"),
        ("timesformer", "not packaged in torchvision")):
    register(_name, _unavailable(_name, _reason))
