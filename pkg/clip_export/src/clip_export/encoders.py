"""CLIP encoder pair wrapped behind a minimal embedding interface.

Everything downstream only needs two functions: images -> unit-norm float32
rows and texts -> unit-norm float32 rows. Tests substitute lightweight stubs;
production loads a pretrained vision-language model pair via transformers.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DEFAULT_BACKBONE = "openai/clip-vit-large-patch14"


@dataclass
class EncoderPair:
    """Image and text embedding callables sharing one output dimension."""

    embed_images: Callable[[Sequence], np.ndarray]  # PIL images -> (B, d)
    embed_texts: Callable[[Sequence[str]], np.ndarray]  # strings -> (B, d)
    dim: int


def _normalize(rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("encoder produced a zero embedding")
    return (rows / norms).astype(np.float32)


def load_encoder(backbone: str = DEFAULT_BACKBONE,
                 device: str = "cpu", batch_size: int = 64) -> EncoderPair:
    """Load a pretrained CLIP model/processor pair from transformers."""
    import torch
    from transformers import CLIPModel, CLIPProcessor

    model = CLIPModel.from_pretrained(backbone).to(device).eval()
    processor = CLIPProcessor.from_pretrained(backbone)

    def embed_images(images) -> np.ndarray:
        chunks = []
        with torch.no_grad():
            for lo in range(0, len(images), batch_size):
                inputs = processor(images=list(images[lo : lo + batch_size]),
                                   return_tensors="pt").to(device)
                feats = model.get_image_features(**inputs)
                chunks.append(feats.cpu().numpy())
        return _normalize(np.concatenate(chunks))

    def embed_texts(texts) -> np.ndarray:
        chunks = []
        with torch.no_grad():
            for lo in range(0, len(texts), batch_size):
                inputs = processor(text=list(texts[lo : lo + batch_size]),
                                   return_tensors="pt", padding=True,
                                   truncation=True).to(device)
                feats = model.get_text_features(**inputs)
                chunks.append(feats.cpu().numpy())
        return _normalize(np.concatenate(chunks))

    return EncoderPair(embed_images, embed_texts,
                       dim=model.config.projection_dim)
