"""Hot numeric kernels with a compiled core and a numpy fallback.

Three kernels have a compiled implementation (``reidkit._native``, built from
``_native.pyx``): euclidean distance blocks, the sparse-encoding Jaccard
accumulation used by k-reciprocal re-ranking, and the cross-neighborhood
distance accumulation. The backend is selected once at import time; set
``REIDKIT_BACKEND=numpy`` (or ``native``) to force a choice, or pass
``backend=`` explicitly. Cosine distances are a plain matrix product and stay
on the numpy/BLAS path in both backends.

All kernels take and return C-contiguous float64 arrays. Per-row results are
independent of both chunking and thread count, so outputs do not depend on
``threads``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import ValidationError

try:
    from . import _native
except ImportError:
    _native = None

_ROW_CHUNK = 256
_ENV_BACKEND = os.environ.get("REIDKIT_BACKEND", "").strip().lower() or None


def available_backends() -> tuple[str, ...]:
    return ("native", "numpy") if _native is not None else ("numpy",)


def default_backend() -> str:
    if _ENV_BACKEND is not None:
        return _resolve(_ENV_BACKEND)
    return "native" if _native is not None else "numpy"


def _resolve(backend: str | None) -> str:
    if backend is None:
        return default_backend()
    if backend not in ("native", "numpy"):
        raise ValidationError(f"unknown kernel backend {backend!r} (use 'native' or 'numpy')")
    if backend == "native" and _native is None:
        raise ValidationError("native kernel backend requested but the extension is not built")
    return backend


def _num_threads(threads: int | None) -> int:
    if threads is None or threads <= 0:
        return os.cpu_count() or 1
    return threads


def _run_chunks(fn, n_rows: int, threads: int | None) -> None:
    """Apply fn(start, stop) over fixed-size row chunks, optionally threaded."""
    spans = [(s, min(s + _ROW_CHUNK, n_rows)) for s in range(0, n_rows, _ROW_CHUNK)]
    workers = min(_num_threads(threads), len(spans))
    if workers <= 1:
        for start, stop in spans:
            fn(start, stop)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(lambda span: fn(*span), spans))


def euclidean_distances(
    query: np.ndarray,
    gallery: np.ndarray,
    *,
    backend: str | None = None,
    threads: int | None = None,
) -> np.ndarray:
    """Pairwise euclidean distances, computed from explicit differences.

    The difference-based formulation keeps the self-comparison diagonal at an
    exact zero and the matrix exactly symmetric, which the dot-product trick
    does not guarantee.
    """
    query = np.ascontiguousarray(query, dtype=np.float64)
    gallery = np.ascontiguousarray(gallery, dtype=np.float64)
    if query.ndim != 2 or gallery.ndim != 2 or query.shape[1] != gallery.shape[1]:
        raise ValidationError(
            f"euclidean kernel needs matching 2-D inputs, got {query.shape} and {gallery.shape}"
        )
    out = np.empty((query.shape[0], gallery.shape[0]), dtype=np.float64)
    if _resolve(backend) == "native":
        _run_chunks(lambda s, t: _native.euclidean_rows(query, gallery, out, s, t),
                    query.shape[0], threads)
    else:
        _run_chunks(lambda s, t: _euclidean_numpy(query, gallery, out, s, t),
                    query.shape[0], threads)
    return out


def _euclidean_numpy(query, gallery, out, start, stop):
    # Gallery is chunked as well to bound the (rows, cols, dim) temporary.
    for g0 in range(0, gallery.shape[0], _ROW_CHUNK):
        g1 = min(g0 + _ROW_CHUNK, gallery.shape[0])
        diff = query[start:stop, None, :] - gallery[None, g0:g1, :]
        np.sqrt(np.einsum("ijk,ijk->ij", diff, diff), out=out[start:stop, g0:g1])


def cosine_distances(query: np.ndarray, gallery: np.ndarray, **_ignored) -> np.ndarray:
    """Pairwise cosine distances 1 - cos(q, g), clipped to [0, 2]."""
    query = np.ascontiguousarray(query, dtype=np.float64)
    gallery = np.ascontiguousarray(gallery, dtype=np.float64)
    if query.ndim != 2 or gallery.ndim != 2 or query.shape[1] != gallery.shape[1]:
        raise ValidationError(
            f"cosine kernel needs matching 2-D inputs, got {query.shape} and {gallery.shape}"
        )
    qn = np.linalg.norm(query, axis=1)
    gn = np.linalg.norm(gallery, axis=1)
    sims = (query @ gallery.T) / np.outer(qn, gn)
    return np.clip(1.0 - sims, 0.0, 2.0)


def jaccard_from_encoding(
    encoding: np.ndarray,
    num_query: int,
    *,
    backend: str | None = None,
    threads: int | None = None,
) -> np.ndarray:
    """Jaccard distances between query rows and gallery rows of a sparse encoding.

    ``encoding`` is (N, N) with rows normalized to unit sum; entry (i, j) of
    the result is 1 - minsum / (2 - minsum) with minsum the elementwise-min
    overlap of rows i and num_query + j. The unit row sums make 2 - minsum
    equal to the elementwise-max sum, i.e. this is the weighted-set Jaccard.
    """
    encoding = np.ascontiguousarray(encoding, dtype=np.float64)
    n = encoding.shape[0]
    if encoding.ndim != 2 or encoding.shape[1] != n:
        raise ValidationError(f"encoding must be square, got shape {encoding.shape}")
    if not 0 < num_query < n:
        raise ValidationError(f"num_query must be in (0, {n}), got {num_query}")
    out = np.empty((num_query, n - num_query), dtype=np.float64)
    if _resolve(backend) == "native":
        _run_chunks(lambda s, t: _native.jaccard_rows(encoding, num_query, out, s, t),
                    num_query, threads)
    else:
        _run_chunks(lambda s, t: _jaccard_numpy(encoding, num_query, out, s, t),
                    num_query, threads)
    return out


def _jaccard_numpy(encoding, num_query, out, start, stop):
    gallery_rows = encoding[num_query:]
    for i in range(start, stop):
        nz = np.flatnonzero(encoding[i])
        if nz.size == 0:
            out[i] = 1.0
            continue
        minsum = np.minimum(encoding[i, nz], gallery_rows[:, nz]).sum(axis=1)
        out[i] = 1.0 - minsum / (2.0 - minsum)


def ecn_accumulate(
    dist: np.ndarray,
    neighbors: np.ndarray,
    num_query: int,
    *,
    backend: str | None = None,
    threads: int | None = None,
) -> np.ndarray:
    """Symmetric neighbor-distance accumulation over a union distance matrix.

    out[p, j] = (sum_i dist[neighbors[p, i], q + j] +
                 sum_i dist[neighbors[q + j, i], p]) / (2 t)
    """
    dist = np.ascontiguousarray(dist, dtype=np.float64)
    neighbors = np.ascontiguousarray(neighbors, dtype=np.intp)
    n = dist.shape[0]
    if dist.ndim != 2 or dist.shape[1] != n:
        raise ValidationError(f"distance matrix must be square, got shape {dist.shape}")
    if neighbors.ndim != 2 or neighbors.shape[0] != n:
        raise ValidationError(
            f"neighbors must have one row per point, got {neighbors.shape} for {n} points"
        )
    if not 0 < num_query < n:
        raise ValidationError(f"num_query must be in (0, {n}), got {num_query}")
    out = np.empty((num_query, n - num_query), dtype=np.float64)
    if _resolve(backend) == "native":
        _run_chunks(lambda s, t: _native.ecn_rows(dist, neighbors, num_query, out, s, t),
                    num_query, threads)
    else:
        _ecn_numpy(dist, neighbors, num_query, out)
    return out


def _ecn_numpy(dist, neighbors, num_query, out):
    t = neighbors.shape[1]
    out[:] = 0.0
    gallery = np.arange(num_query, dist.shape[0])
    for i in range(t):
        out += dist[neighbors[:num_query, i]][:, num_query:]
        out += dist[neighbors[gallery, i]][:, :num_query].T
    out /= 2.0 * t
