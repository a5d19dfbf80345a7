"""Embedding sets, their binary/CSV round trip, and pairwise distances.

An embedding file is a REID container (see formats) plus a CSV sidecar named
``<file>.csv`` with the exact header ``image_id,person_id,camera_id``, one row
per payload row. Vectors are float32 on disk and float64 in memory; distances
are always computed and kept in float64 so ranking ties stay deterministic.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import formats, kernels
from .errors import FileFormatError, ValidationError

JUNK_PERSON_ID = -1

SIDECAR_HEADER = ("image_id", "person_id", "camera_id")


@dataclass(frozen=True)
class EmbeddingSet:
    """N embedding vectors with aligned identity and camera metadata."""

    vectors: np.ndarray            # (N, D) float64
    image_ids: tuple[str, ...]
    person_ids: np.ndarray         # (N,) int64
    camera_ids: np.ndarray         # (N,) int64

    def __post_init__(self):
        vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise ValidationError(f"vectors must be 2-D, got shape {vectors.shape}")
        if vectors.shape[1] < 1:
            raise ValidationError("embedding dimension must be >= 1")
        person = np.asarray(self.person_ids, dtype=np.int64)
        camera = np.asarray(self.camera_ids, dtype=np.int64)
        ids = tuple(str(i) for i in self.image_ids)
        n = vectors.shape[0]
        if not (len(ids) == person.shape[0] == camera.shape[0] == n):
            raise ValidationError(
                "embedding set collections must share one length: "
                f"vectors={n}, image_ids={len(ids)}, person_ids={person.shape[0]}, "
                f"camera_ids={camera.shape[0]}"
            )
        if vectors.size and not np.isfinite(vectors).all():
            r, c = np.argwhere(~np.isfinite(vectors))[0]
            raise ValidationError(f"non-finite value at row {r}, col {c}")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "image_ids", ids)
        object.__setattr__(self, "person_ids", person)
        object.__setattr__(self, "camera_ids", camera)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class DistanceMatrix:
    """Q x G pairwise distances with row/column image-id labels."""

    values: np.ndarray             # (Q, G) float64, finite, >= 0
    query_ids: tuple[str, ...]
    gallery_ids: tuple[str, ...]

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValidationError(f"distance values must be 2-D, got shape {values.shape}")
        qids = tuple(str(i) for i in self.query_ids)
        gids = tuple(str(i) for i in self.gallery_ids)
        if values.shape != (len(qids), len(gids)):
            raise ValidationError(
                f"label lengths ({len(qids)}, {len(gids)}) do not match "
                f"matrix shape {values.shape}"
            )
        if values.size:
            if not np.isfinite(values).all():
                r, c = np.argwhere(~np.isfinite(values))[0]
                raise ValidationError(f"non-finite distance at row {r}, col {c}")
            if values.min() < 0.0:
                r, c = np.argwhere(values < 0.0)[0]
                raise ValidationError(f"negative distance at row {r}, col {c}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "query_ids", qids)
        object.__setattr__(self, "gallery_ids", gids)


def sidecar_path(path: str | Path) -> Path:
    """Manifest CSV that accompanies an embedding file: ``<file>.csv``."""
    path = Path(path)
    return path.with_name(path.name + ".csv")


def _read_sidecar(path: Path) -> tuple[tuple[str, ...], np.ndarray, np.ndarray]:
    if not path.exists():
        raise FileFormatError(f"{path}: sidecar manifest not found")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != SIDECAR_HEADER:
            raise FileFormatError(
                f"{path}: sidecar header must be {','.join(SIDECAR_HEADER)}, "
                f"got {','.join(header) if header else '<empty>'}"
            )
        ids, pids, cams = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise FileFormatError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
            ids.append(row[0])
            try:
                pids.append(int(row[1]))
                cams.append(int(row[2]))
            except ValueError as exc:
                raise FileFormatError(f"{path}: line {lineno}: {exc}") from None
    return tuple(ids), np.array(pids, dtype=np.int64), np.array(cams, dtype=np.int64)


def load_embeddings(path: str | Path, manifest_path: str | Path | None = None) -> EmbeddingSet:
    """Load a REID payload plus its sidecar manifest into an EmbeddingSet."""
    path = Path(path)
    vectors = formats.read_embedding_payload(path)
    manifest = Path(manifest_path) if manifest_path is not None else sidecar_path(path)
    ids, pids, cams = _read_sidecar(manifest)
    if len(ids) != vectors.shape[0]:
        raise FileFormatError(
            f"{manifest}: manifest lists {len(ids)} rows but payload header "
            f"declares {vectors.shape[0]}"
        )
    return EmbeddingSet(vectors.astype(np.float64), ids, pids, cams)


def write_embeddings(
    emb: EmbeddingSet, path: str | Path, manifest_path: str | Path | None = None
) -> None:
    """Write payload and sidecar; the inverse of load_embeddings."""
    path = Path(path)
    formats.write_embedding_payload(path, emb.vectors)
    manifest = Path(manifest_path) if manifest_path is not None else sidecar_path(path)
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SIDECAR_HEADER)
        for image_id, pid, cam in zip(emb.image_ids, emb.person_ids, emb.camera_ids):
            writer.writerow([image_id, int(pid), int(cam)])


def l2_normalize(emb: EmbeddingSet) -> EmbeddingSet:
    """Scale every vector to unit euclidean norm; zero vectors are rejected."""
    norms = np.linalg.norm(emb.vectors, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValidationError(
            f"cannot normalize zero vector for image_id '{emb.image_ids[zero[0]]}'"
        )
    return EmbeddingSet(
        emb.vectors / norms[:, None], emb.image_ids, emb.person_ids, emb.camera_ids
    )


def _check_dims(query: EmbeddingSet, gallery: EmbeddingSet) -> None:
    if query.dim != gallery.dim:
        raise ValidationError(
            f"embedding dimensions differ: query D={query.dim}, gallery D={gallery.dim}"
        )


def euclidean_distance_matrix(
    query: EmbeddingSet,
    gallery: EmbeddingSet,
    *,
    backend: str | None = None,
    threads: int | None = None,
) -> DistanceMatrix:
    _check_dims(query, gallery)
    values = kernels.euclidean_distances(
        query.vectors, gallery.vectors, backend=backend, threads=threads
    )
    return DistanceMatrix(values, query.image_ids, gallery.image_ids)


def cosine_distance_matrix(
    query: EmbeddingSet,
    gallery: EmbeddingSet,
    *,
    backend: str | None = None,
    threads: int | None = None,
) -> DistanceMatrix:
    _check_dims(query, gallery)
    for emb in (query, gallery):
        norms = np.linalg.norm(emb.vectors, axis=1)
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise ValidationError(
                f"cosine distance undefined for zero vector "
                f"image_id '{emb.image_ids[zero[0]]}'"
            )
    values = kernels.cosine_distances(
        query.vectors, gallery.vectors, backend=backend, threads=threads
    )
    return DistanceMatrix(values, query.image_ids, gallery.image_ids)

DISTANCE_FUNCTIONS = {
    "euclidean": euclidean_distance_matrix,
    "cosine": cosine_distance_matrix,
}
