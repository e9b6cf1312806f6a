"""Image/text encoders behind one small interface.

The hash-projection stub is fully offline and deterministic; the CLIP
backend needs torch + transformers and downloaded weights.  The embedding
width C follows the chosen encoder.
"""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image


class StubEncoder:
    """Deterministic content-sensitive encoder for smoke tests and CI.

    Images are center-cropped, downscaled, and pushed through a fixed random
    projection; texts are hashed into a seed for a unit vector.  Not
    semantically meaningful, but stable across runs and machines.
    """

    name = "stub"
    _PATCH = 16

    def __init__(self, dim: int = 64):
        self.dim = dim
        rng = np.random.default_rng(20240601)
        self._projection = rng.standard_normal((self._PATCH * self._PATCH, dim))

    def encode_image(self, image: Image.Image) -> np.ndarray:
        square = center_crop_square(image).convert("L").resize(
            (self._PATCH, self._PATCH), Image.BILINEAR
        )
        flat = np.asarray(square, dtype=np.float64).reshape(-1) / 255.0
        vec = flat @ self._projection
        return (vec / max(np.linalg.norm(vec), 1e-12)).astype(np.float32)

    def encode_text(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        vec = rng.standard_normal(self.dim)
        return (vec / np.linalg.norm(vec)).astype(np.float32)


class ClipEncoder:
    """Pretrained CLIP through huggingface transformers (pooled projections)."""

    name = "clip"

    def __init__(self, model_name: str = "openai/clip-vit-base-patch16", device: str = "cpu"):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise RuntimeError(
                "the clip encoder needs torch and transformers installed"
            ) from exc
        self._torch = torch
        self.model = CLIPModel.from_pretrained(model_name).to(device).eval()
        self.processor = CLIPProcessor.from_pretrained(model_name)
        self.device = device
        self.dim = int(self.model.config.projection_dim)

    def encode_image(self, image: Image.Image) -> np.ndarray:
        inputs = self.processor(images=image, return_tensors="pt").to(self.device)
        with self._torch.no_grad():
            feats = self.model.get_image_features(**inputs)
        return feats[0].cpu().numpy().astype(np.float32)

    def encode_text(self, text: str) -> np.ndarray:
        inputs = self.processor(text=[text], return_tensors="pt", padding=True).to(self.device)
        with self._torch.no_grad():
            feats = self.model.get_text_features(**inputs)
        return feats[0].cpu().numpy().astype(np.float32)


def center_crop_square(image: Image.Image) -> Image.Image:
    width, height = image.size
    side = min(width, height)
    left = (width - side) // 2
    top = (height - side) // 2
    return image.crop((left, top, left + side, top + side))


def make_encoder(name: str, dim: int = 64, model_name: str | None = None):
    if name == "stub":
        return StubEncoder(dim=dim)
    if name == "clip":
        kwargs = {"model_name": model_name} if model_name else {}
        return ClipEncoder(**kwargs)
    raise ValueError(f"unknown encoder {name!r}; options: stub, clip")
