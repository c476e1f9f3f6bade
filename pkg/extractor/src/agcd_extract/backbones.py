"""Embedding backbones for the extractor.

Every backbone maps a batch of PIL images to a float32 matrix with one
L2-normalized row per image, deterministically in eval mode.  The random
projection backbone has no heavy dependencies and fixed weights, so it works
offline and anchors the format tests; the torchvision backbones provide real
class-token / pooled features when torch and weights are available.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

__all__ = ["BackboneError", "get_backbone", "available_backbones"]


class BackboneError(RuntimeError):
    """Backbone construction failed (unknown id, missing deps or weights)."""


class RandomProjectionBackbone:
    """Grayscale 32x32 pixels projected by a fixed seeded Gaussian matrix.

    Not a learned representation; exists so the export pipeline and its file
    format can run anywhere, byte-reproducibly.
    """

    side = 32

    def __init__(self, dim: int = 64, seed: int = 1234):
        self.dim = dim
        rng = np.random.default_rng(np.random.SeedSequence([seed, dim]))
        self.projection = rng.standard_normal((self.side * self.side, dim)) / np.sqrt(dim)

    def embed(self, images: list[Image.Image]) -> np.ndarray:
        rows = np.stack(
            [
                np.asarray(
                    img.convert("L").resize((self.side, self.side), Image.BILINEAR),
                    dtype=np.float64,
                ).ravel()
                / 255.0
                for img in images
            ]
        )
        out = rows @ self.projection
        out /= np.maximum(np.linalg.norm(out, axis=1, keepdims=True), 1e-12)
        return out.astype(np.float32)


class TorchvisionBackbone:
    """ViT class-token or ResNet pooled features from torchvision models.

    ``weights_path`` loads a local state dict; ``pretrained=True`` asks
    torchvision for its published weights (needs network access).  Without
    either, weights are randomly initialized from ``init_seed`` - still a
    deterministic embedding, useful for pipeline tests only.
    """

    def __init__(self, arch: str, weights_path=None, pretrained=False, init_seed: int = 0):
        try:
            import torch
            from torchvision import models, transforms
        except ImportError as exc:
            raise BackboneError(f"torch/torchvision unavailable: {exc}") from exc

        self._torch = torch
        torch.manual_seed(init_seed)
        factory = {"vit-b16": models.vit_b_16, "resnet18": models.resnet18}
        if arch not in factory:
            raise BackboneError(f"unknown torchvision arch {arch!r}")
        try:
            model = factory[arch](weights="DEFAULT" if pretrained else None)
        except Exception as exc:
            raise BackboneError(f"could not fetch pretrained weights for {arch}: {exc}") from exc
        if weights_path is not None:
            state = torch.load(weights_path, map_location="cpu")
            model.load_state_dict(state)

        if arch == "vit-b16":
            model.heads = torch.nn.Identity()  # leaves the class-token output
        else:
            model.fc = torch.nn.Identity()  # global-average-pooled features
        model.eval()
        self.model = model
        self.transform = transforms.Compose(
            [
                transforms.Resize(256),
                transforms.CenterCrop(224),
                transforms.ToTensor(),
                transforms.Normalize(mean=[0.485, 0.456, 0.406], std=[0.229, 0.224, 0.225]),
            ]
        )

    def embed(self, images: list[Image.Image]) -> np.ndarray:
        torch = self._torch
        batch = torch.stack([self.transform(img.convert("RGB")) for img in images])
        with torch.no_grad():
            feats = self.model(batch).double()
            feats = feats / feats.norm(dim=1, keepdim=True).clamp_min(1e-12)
        return feats.numpy().astype(np.float32)


_REGISTRY = {
    "toy-rp64": lambda **kw: RandomProjectionBackbone(dim=64),
    "toy-rp128": lambda **kw: RandomProjectionBackbone(dim=128),
    "vit-b16": lambda **kw: TorchvisionBackbone("vit-b16", **kw),
    "vit-b16-random": lambda **kw: TorchvisionBackbone("vit-b16", pretrained=False, **kw),
    "resnet18": lambda **kw: TorchvisionBackbone("resnet18", **kw),
    "resnet18-random": lambda **kw: TorchvisionBackbone("resnet18", pretrained=False, **kw),
}


def available_backbones() -> list[str]:
    return sorted(_REGISTRY)


def get_backbone(backbone_id: str, **kwargs):
    if backbone_id not in _REGISTRY:
        raise BackboneError(
            f"unknown backbone {backbone_id!r}; available: {', '.join(available_backbones())}"
        )
    if backbone_id in ("vit-b16", "resnet18") and not kwargs.get("weights_path"):
        kwargs.setdefault("pretrained", True)
    return _REGISTRY[backbone_id](**kwargs)
