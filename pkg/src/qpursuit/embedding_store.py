"""Embedding dataset I/O, splitting, normalization, and synthetic generation.

The on-disk format is a small custom binary container ("EMBD") so that
datasets round-trip bit-exactly and can be produced by external exporters
without sharing any Python-level dependency. An optional plain-text sidecar
(`<path>.names.json`) carries class and concept names, one per line, under
`#classes` / `#concepts` section markers.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

MAGIC = b"EMBD"
VERSION = 1
_HEADER = struct.Struct("<4sIQIII")  # magic, version, N, d, C, flags
FLAG_LABELS = 0x1


class EmbdFormatError(ValueError):
    """Raised when an EMBD file is malformed."""


@dataclass(frozen=True)
class EmbeddingDataset:
    """Rows of semantic embeddings with integer labels.

    Immutable after construction; safe to share across threads.
    """

    embeddings: np.ndarray  # (N, d) float32
    labels: np.ndarray      # (N,) uint32
    num_classes: int
    class_names: list[str] | None = None
    concept_names: list[str] | None = None
    provenance: str = "external"

    def __post_init__(self):
        emb = np.ascontiguousarray(self.embeddings, dtype=np.float32)
        lab = np.ascontiguousarray(self.labels, dtype=np.uint32)
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "labels", lab)
        if emb.ndim != 2:
            raise ValueError("embeddings must be a 2-D matrix")
        n, d = emb.shape
        if n < 1:
            raise ValueError("dataset must contain at least one row")
        if d < 2:
            raise ValueError("embedding dimension must be at least 2")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if lab.shape != (n,):
            raise ValueError("labels must be a vector of length N")
        if lab.size and int(lab.max()) >= self.num_classes:
            raise ValueError(
                f"label {int(lab.max())} out of range for C={self.num_classes}"
            )
        if self.class_names is not None and len(self.class_names) != self.num_classes:
            raise ValueError("class_names length must equal num_classes")
        emb.setflags(write=False)
        lab.setflags(write=False)

    @property
    def num_samples(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def equals(self, other: "EmbeddingDataset") -> bool:
        return (
            np.array_equal(self.embeddings, other.embeddings)
            and np.array_equal(self.labels, other.labels)
            and self.num_classes == other.num_classes
            and self.class_names == other.class_names
            and self.concept_names == other.concept_names
        )


@dataclass(frozen=True)
class SynthSpec:
    """Configuration for the Gaussian-mixture synthetic generator."""

    num_classes: int
    dim: int
    samples_per_class: int
    clusters_per_class: int = 1
    center_separation: float = 10.0
    within_cluster_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        if self.clusters_per_class < 1:
            raise ValueError("clusters_per_class must be >= 1")
        if self.center_separation <= 0:
            raise ValueError("center_separation must be positive")
        if self.within_cluster_std <= 0:
            raise ValueError("within_cluster_std must be positive")


def _sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".names.json")


def save_dataset(ds: EmbeddingDataset, path: str | Path) -> None:
    """Write `ds` in the EMBD binary format (plus name sidecar if present)."""
    path = Path(path)
    n, d = ds.embeddings.shape
    header = _HEADER.pack(MAGIC, VERSION, n, d, ds.num_classes, FLAG_LABELS)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(ds.embeddings.astype("<f4", copy=False).tobytes())
        fh.write(ds.labels.astype("<u4", copy=False).tobytes())
    sidecar = _sidecar_path(path)
    if ds.class_names is None and ds.concept_names is None:
        sidecar.unlink(missing_ok=True)
        return
    lines: list[str] = []
    if ds.class_names is not None:
        lines.append("#classes")
        lines.extend(ds.class_names)
    if ds.concept_names is not None:
        lines.append("#concepts")
        lines.extend(ds.concept_names)
    sidecar.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_sidecar(path: Path) -> tuple[list[str] | None, list[str] | None]:
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        return None, None
    classes: list[str] | None = None
    concepts: list[str] | None = None
    current: list[str] | None = None
    for line in sidecar.read_text(encoding="utf-8").splitlines():
        if line == "#classes":
            classes = []
            current = classes
        elif line == "#concepts":
            concepts = []
            current = concepts
        elif line.startswith("#"):
            current = None  # unknown section (e.g. #joint), skip
        elif current is not None:
            current.append(line)
    return classes, concepts


def load_dataset(path: str | Path) -> EmbeddingDataset:
    """Load an EMBD file, validating header and payload sizes."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise EmbdFormatError(f"{path}: truncated payload (file shorter than header)")
    magic, version, n, d, c, flags = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise EmbdFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise EmbdFormatError(f"{path}: unsupported version {version}")
    offset = _HEADER.size
    emb_bytes = 4 * n * d
    if len(raw) < offset + emb_bytes:
        raise EmbdFormatError(f"{path}: truncated payload (embeddings)")
    emb = np.frombuffer(raw, dtype="<f4", count=n * d, offset=offset).reshape(n, d)
    offset += emb_bytes
    if flags & FLAG_LABELS:
        if len(raw) < offset + 4 * n:
            raise EmbdFormatError(f"{path}: truncated payload (labels)")
        labels = np.frombuffer(raw, dtype="<u4", count=n, offset=offset)
        offset += 4 * n
    else:
        labels = np.zeros(n, dtype=np.uint32)
    if len(raw) != offset:
        raise EmbdFormatError(f"{path}: trailing bytes after payload")
    class_names, concept_names = _read_sidecar(path)
    return EmbeddingDataset(
        embeddings=emb.copy(),
        labels=np.asarray(labels).copy(),
        num_classes=c,
        class_names=class_names,
        concept_names=concept_names,
    )


def normalize_rows(ds: EmbeddingDataset) -> EmbeddingDataset:
    """Return a copy of `ds` with every embedding row scaled to unit L2 norm."""
    norms = np.linalg.norm(ds.embeddings.astype(np.float64), axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValueError(f"cannot normalize zero-norm row at index {int(zero[0])}")
    emb = (ds.embeddings.astype(np.float64) / norms[:, None]).astype(np.float32)
    return replace(ds, embeddings=emb)


def split(
    ds: EmbeddingDataset, val_fraction: float, seed: int
) -> tuple[EmbeddingDataset, EmbeddingDataset]:
    """Label-stratified train/validation split, deterministic per seed."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie in (0, 1)")
    if val_fraction * ds.num_samples < 1:
        raise ValueError("val_fraction too small: validation split would be empty")
    rng = np.random.default_rng(seed)
    val_idx: list[np.ndarray] = []
    train_idx: list[np.ndarray] = []
    for c in range(ds.num_classes):
        members = np.flatnonzero(ds.labels == c)
        perm = rng.permutation(members)
        n_val = int(round(val_fraction * members.size))
        val_idx.append(perm[:n_val])
        train_idx.append(perm[n_val:])
    vi = np.sort(np.concatenate(val_idx))
    ti = np.sort(np.concatenate(train_idx))
    take = lambda idx: replace(
        ds, embeddings=ds.embeddings[idx], labels=ds.labels[idx]
    )
    return take(ti), take(vi)


def synth_gaussian_mixture(spec: SynthSpec) -> EmbeddingDataset:
    """Sample a unit-norm Gaussian-mixture dataset with separated class centers.

    Centers are drawn at random and rescaled so the minimum pairwise center
    distance equals `center_separation`; each class may own several clusters.
    """
    rng = np.random.default_rng(spec.seed)
    k = spec.num_classes * spec.clusters_per_class
    centers = rng.standard_normal((k, spec.dim))
    diffs = centers[:, None, :] - centers[None, :, :]
    dists = np.linalg.norm(diffs, axis=-1)
    np.fill_diagonal(dists, np.inf)
    centers *= spec.center_separation / dists.min()

    rows = []
    labels = []
    for c in range(spec.num_classes):
        own = centers[c * spec.clusters_per_class : (c + 1) * spec.clusters_per_class]
        picks = rng.integers(0, spec.clusters_per_class, size=spec.samples_per_class)
        noise = rng.standard_normal((spec.samples_per_class, spec.dim))
        rows.append(own[picks] + spec.within_cluster_std * noise)
        labels.append(np.full(spec.samples_per_class, c, dtype=np.uint32))
    ds = EmbeddingDataset(
        embeddings=np.concatenate(rows).astype(np.float32),
        labels=np.concatenate(labels),
        num_classes=spec.num_classes,
        provenance="synthetic",
    )
    return normalize_rows(ds)
