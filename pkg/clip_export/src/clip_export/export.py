"""Export jobs: embed an image folder or a concept list into EMBD files."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embd_writer import write_embd
from .encoders import DEFAULT_BACKBONE, EncoderPair, _normalize, load_encoder

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp"}


@dataclass
class ExportJob:
    """Configuration for one export run.

    `data` is a class-per-subdirectory image folder for image exports, or a
    text file with one concept per line for concept exports.
    """

    data: Path
    out: Path
    backbone: str = DEFAULT_BACKBONE
    batch_size: int = 64
    device: str = "cpu"

    def __post_init__(self):
        self.data = Path(self.data)
        self.out = Path(self.out)
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


def _collect_image_folder(root: Path) -> tuple[list[Path], np.ndarray, list[str]]:
    """Class-per-subdirectory layout; classes sorted by name for determinism."""
    if not root.is_dir():
        raise ValueError(f"{root}: not a readable image folder")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ValueError(f"{root}: no class subdirectories")
    paths: list[Path] = []
    labels: list[int] = []
    for ci, cdir in enumerate(class_dirs):
        files = sorted(p for p in cdir.iterdir()
                       if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise ValueError(f"{cdir}: class directory contains no images")
        paths.extend(files)
        labels.extend([ci] * len(files))
    return paths, np.asarray(labels, dtype=np.uint32), [d.name for d in class_dirs]


def export_images(job: ExportJob, encoder: EncoderPair | None = None) -> Path:
    """Embed every image under `job.data` and write `<out>` with labels and
    class names; returns the written path."""
    from PIL import Image

    encoder = encoder or load_encoder(job.backbone, job.device, job.batch_size)
    paths, labels, class_names = _collect_image_folder(job.data)
    images = [Image.open(p).convert("RGB") for p in paths]
    emb = _normalize(encoder.embed_images(images))
    return write_embd(job.out, emb, labels=labels,
                      num_classes=len(class_names), class_names=class_names)


def read_concepts(path: Path) -> list[str]:
    """One concept per line; blank lines skipped; duplicates allowed, warned."""
    lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    concepts = [ln for ln in lines if ln]
    if not concepts:
        raise ValueError(f"{path}: concept list is empty")
    if len(set(concepts)) != len(concepts):
        warnings.warn("duplicate concept strings produce duplicate rows")
    return concepts


def export_concepts(job: ExportJob, encoder: EncoderPair | None = None) -> Path:
    """Embed the concept list at `job.data` and write `<out>` without labels
    (flags bit 0 clear), concept names in the sidecar."""
    encoder = encoder or load_encoder(job.backbone, job.device, job.batch_size)
    concepts = read_concepts(job.data)
    emb = _normalize(encoder.embed_texts(concepts))
    return write_embd(job.out, emb, labels=None, num_classes=2,
                      concept_names=concepts)
