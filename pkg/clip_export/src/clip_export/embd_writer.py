"""Writer for the EMBD embedding container.

Layout (little-endian): magic "EMBD", version u32 = 1, N u64, d u32, C u32,
flags u32 (bit 0 = labels present), then N*d float32 row-major embeddings,
then N u32 labels if flagged. An optional text sidecar `<path>.names.json`
carries names one per line under `#classes` / `#concepts` section markers.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"EMBD"
VERSION = 1
_HEADER = struct.Struct("<4sIQIII")
FLAG_LABELS = 0x1


def write_embd(path: str | Path, embeddings: np.ndarray,
               labels: np.ndarray | None = None, num_classes: int = 2,
               class_names: list[str] | None = None,
               concept_names: list[str] | None = None) -> Path:
    """Write embeddings (and labels, if given) as an EMBD file.

    With `labels=None` the labels flag is cleared and no label payload is
    written (the concept-dictionary case).
    """
    path = Path(path)
    emb = np.ascontiguousarray(embeddings, dtype="<f4")
    if emb.ndim != 2 or emb.shape[0] < 1 or emb.shape[1] < 2:
        raise ValueError("embeddings must be a non-empty (N, d>=2) matrix")
    n, d = emb.shape
    flags = 0
    if labels is not None:
        labels = np.ascontiguousarray(labels, dtype="<u4")
        if labels.shape != (n,):
            raise ValueError("labels must be a vector of length N")
        if labels.size and int(labels.max()) >= num_classes:
            raise ValueError("label out of range")
        flags |= FLAG_LABELS
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, d, num_classes, flags))
        fh.write(emb.tobytes())
        if labels is not None:
            fh.write(labels.tobytes())
    _write_sidecar(path, class_names, concept_names)
    return path


def _write_sidecar(path: Path, class_names: list[str] | None,
                   concept_names: list[str] | None) -> None:
    sidecar = Path(str(path) + ".names.json")
    if class_names is None and concept_names is None:
        sidecar.unlink(missing_ok=True)
        return
    lines: list[str] = []
    if class_names is not None:
        lines.append("#classes")
        lines.extend(class_names)
    if concept_names is not None:
        lines.append("#concepts")
        lines.extend(concept_names)
    sidecar.write_text("\n".join(lines) + "\n", encoding="utf-8")
