"""Binary containers for embeddings, distance matrices and dense tensors.

All three containers share one header scheme, little-endian throughout:

    magic (4 bytes) | version u16 | reserved u16 | shape fields u32 ...

* ``REID``: count N, dim D, then N*D float32 values, row-major.
* ``RDMX``: rows Q, cols G, then Q*G float64 values, row-major.
  (Distances are stored at full precision so rankings survive a round trip.)
* ``RTEN``: rank R, then R u32 dims, then float32 values, row-major.

Readers are strict: wrong magic, unsupported version, a non-zero reserved
field, truncated or trailing payload bytes, and non-finite values each raise
a distinct, diagnosable FileFormatError.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FileFormatError

EMBEDDING_MAGIC = b"REID"
MATRIX_MAGIC = b"RDMX"
TENSOR_MAGIC = b"RTEN"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sHH")
_U32 = struct.Struct("<I")


def _read_exact(fh, n: int, what: str, path: Path) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FileFormatError(
            f"{path}: truncated {what}: expected {n} bytes, got {len(data)}"
        )
    return data


def _read_header(fh, magic: bytes, path: Path) -> None:
    got, version, reserved = _HEADER.unpack(_read_exact(fh, _HEADER.size, "header", path))
    if got != magic:
        raise FileFormatError(
            f"{path}: bad magic: expected {magic!r}, got {got!r}"
        )
    if version != FORMAT_VERSION:
        raise FileFormatError(
            f"{path}: unsupported format version {version} (supported: {FORMAT_VERSION})"
        )
    if reserved != 0:
        raise FileFormatError(f"{path}: reserved header field must be 0, got {reserved}")


def _read_payload(fh, dtype: np.dtype, count: int, path: Path) -> np.ndarray:
    nbytes = count * dtype.itemsize
    data = _read_exact(fh, nbytes, "payload", path)
    trailing = fh.read(1)
    if trailing:
        raise FileFormatError(f"{path}: trailing data after payload")
    return np.frombuffer(data, dtype=dtype, count=count).copy()


def _check_finite_2d(values: np.ndarray, path: Path) -> None:
    if values.size and not np.isfinite(values).all():
        r, c = np.argwhere(~np.isfinite(values))[0]
        raise FileFormatError(f"{path}: non-finite value at row {r}, col {c}")


def write_embedding_payload(path: str | Path, vectors: np.ndarray) -> None:
    """Write an (N, D) array as a REID container (values cast to float32)."""
    path = Path(path)
    with np.errstate(over="ignore"):  # overflow reported below with coordinates
        vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    if vectors.ndim != 2:
        raise FileFormatError(f"embedding payload must be 2-D, got shape {vectors.shape}")
    if vectors.size and not np.isfinite(vectors).all():
        r, c = np.argwhere(~np.isfinite(vectors))[0]
        raise FileFormatError(
            f"value at row {r}, col {c} is not finite or not representable in binary32"
        )
    n, d = vectors.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(EMBEDDING_MAGIC, FORMAT_VERSION, 0))
        fh.write(_U32.pack(n))
        fh.write(_U32.pack(d))
        fh.write(vectors.astype("<f4", copy=False).tobytes())


def read_embedding_payload(path: str | Path) -> np.ndarray:
    """Read a REID container, returning the (N, D) float32 payload."""
    path = Path(path)
    with open(path, "rb") as fh:
        _read_header(fh, EMBEDDING_MAGIC, path)
        n = _U32.unpack(_read_exact(fh, 4, "count field", path))[0]
        d = _U32.unpack(_read_exact(fh, 4, "dim field", path))[0]
        if d < 1:
            raise FileFormatError(f"{path}: dim must be >= 1, got {d}")
        values = _read_payload(fh, np.dtype("<f4"), n * d, path).reshape(n, d)
    _check_finite_2d(values, path)
    return values


def write_matrix(path: str | Path, values: np.ndarray) -> None:
    """Write a (Q, G) array as an RDMX container (float64 payload)."""
    path = Path(path)
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise FileFormatError(f"matrix payload must be 2-D, got shape {values.shape}")
    q, g = values.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MATRIX_MAGIC, FORMAT_VERSION, 0))
        fh.write(_U32.pack(q))
        fh.write(_U32.pack(g))
        fh.write(values.astype("<f8", copy=False).tobytes())


def read_matrix(path: str | Path) -> np.ndarray:
    """Read an RDMX container, returning the (Q, G) float64 payload."""
    path = Path(path)
    with open(path, "rb") as fh:
        _read_header(fh, MATRIX_MAGIC, path)
        q = _U32.unpack(_read_exact(fh, 4, "row field", path))[0]
        g = _U32.unpack(_read_exact(fh, 4, "col field", path))[0]
        values = _read_payload(fh, np.dtype("<f8"), q * g, path).reshape(q, g)
    _check_finite_2d(values, path)
    return values


def write_tensor(path: str | Path, values: np.ndarray) -> None:
    """Write an arbitrary-rank array as an RTEN container (float32 payload)."""
    path = Path(path)
    with np.errstate(over="ignore"):  # overflow reported below with the index
        values = np.ascontiguousarray(values, dtype=np.float32)
    if values.ndim < 1:
        values = values.reshape(1)
    if values.size and not np.isfinite(values).all():
        flat = int(np.flatnonzero(~np.isfinite(values.ravel()))[0])
        raise FileFormatError(
            f"value at flat index {flat} is not finite or not representable in binary32"
        )
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TENSOR_MAGIC, FORMAT_VERSION, 0))
        fh.write(_U32.pack(values.ndim))
        for dim in values.shape:
            fh.write(_U32.pack(dim))
        fh.write(values.astype("<f4", copy=False).tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    """Read an RTEN container, returning the float32 payload."""
    path = Path(path)
    with open(path, "rb") as fh:
        _read_header(fh, TENSOR_MAGIC, path)
        rank = _U32.unpack(_read_exact(fh, 4, "rank field", path))[0]
        if rank < 1:
            raise FileFormatError(f"{path}: tensor rank must be >= 1, got {rank}")
        dims = [
            _U32.unpack(_read_exact(fh, 4, f"dim field {i}", path))[0]
            for i in range(rank)
        ]
        count = 1
        for dim in dims:
            count *= dim
        values = _read_payload(fh, np.dtype("<f4"), count, path).reshape(dims)
    if values.size and not np.isfinite(values).all():
        flat = int(np.flatnonzero(~np.isfinite(values.ravel()))[0])
        raise FileFormatError(f"{path}: non-finite value at flat index {flat}")
    return values
