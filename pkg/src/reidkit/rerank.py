"""Distance-matrix re-ranking: k-reciprocal encoding and cross-neighborhood.

Both algorithms operate on the union of query and gallery points. The three
input blocks (query x gallery, query x query, gallery x gallery) must
assemble into one finite, symmetric, zero-diagonal distance matrix over that
union.

k-reciprocal pipeline: distances are squared and row-max normalized (this
makes results invariant to a global rescaling of the inputs), neighbor sets
are the reciprocal top-k1 lists expanded through candidates' reciprocal
top-(k1/2) lists when two thirds of a candidate's set overlaps, each point is
encoded as exp(-d) weights over its expanded set, encodings are averaged over
the k2 nearest lists (local query expansion), and the output blends the
weighted-set Jaccard distance between encodings with the normalized original
distance: (1 - lambda) * jaccard + lambda * original.

Cross-neighborhood pipeline: the re-ranked distance between query p and
gallery g averages the distances of each point's t immediate neighbors to
the other point, (1/2t) * (sum_i d(N_i(p), g) + sum_i d(N_i(g), p)). In
``rank-dist`` mode d(a, b) is the mean of the two mutual 1-based rank
positions (position of b in a's neighbor list and vice versa, 0 for a == b),
which only depends on orderings; in ``orig-dist`` mode d is the assembled
input distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ValidationError

ECN_MODES = ("rank-dist", "orig-dist")


@dataclass(frozen=True)
class KReciprocalParams:
    k1: int = 20
    k2: int = 6
    lam: float = 0.3

    def __post_init__(self):
        if self.k1 < 1 or self.k2 < 1:
            raise ValidationError(f"k1 and k2 must be positive, got k1={self.k1}, k2={self.k2}")
        if self.k2 > self.k1:
            raise ValidationError(f"k2 must not exceed k1, got k1={self.k1}, k2={self.k2}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValidationError(f"lambda must be in [0, 1], got {self.lam}")


@dataclass(frozen=True)
class EcnParams:
    t: int = 4
    mode: str = "rank-dist"

    def __post_init__(self):
        if self.t < 1:
            raise ValidationError(f"t must be positive, got {self.t}")
        if self.mode not in ECN_MODES:
            raise ValidationError(f"mode must be one of {ECN_MODES}, got {self.mode!r}")


def assemble_union(dist_qg, dist_qq, dist_gg) -> np.ndarray:
    """Stack the three blocks into the (Q+G) x (Q+G) union distance matrix."""
    dist_qg = np.asarray(dist_qg, dtype=np.float64)
    dist_qq = np.asarray(dist_qq, dtype=np.float64)
    dist_gg = np.asarray(dist_gg, dtype=np.float64)
    if dist_qg.ndim != 2:
        raise ValidationError(f"query-gallery block must be 2-D, got shape {dist_qg.shape}")
    nq, ng = dist_qg.shape
    if dist_qq.shape != (nq, nq):
        raise ValidationError(
            f"query-query block must be ({nq}, {nq}), got {dist_qq.shape}"
        )
    if dist_gg.shape != (ng, ng):
        raise ValidationError(
            f"gallery-gallery block must be ({ng}, {ng}), got {dist_gg.shape}"
        )
    full = np.block([[dist_qq, dist_qg], [dist_qg.T, dist_gg]])
    if not np.isfinite(full).all():
        raise ValidationError("assembled distance matrix contains non-finite values")
    if full.size and full.min() < 0.0:
        raise ValidationError("assembled distance matrix contains negative values")
    if not np.allclose(full, full.T, atol=1e-8):
        raise ValidationError("assembled distance matrix is not symmetric")
    if not np.allclose(np.diagonal(full), 0.0, atol=1e-8):
        raise ValidationError("assembled distance matrix has a non-zero diagonal")
    # Exact symmetry and a zero diagonal keep neighbor ranks deterministic.
    full = (full + full.T) / 2.0
    np.fill_diagonal(full, 0.0)
    return full


def _stable_order(dist: np.ndarray) -> np.ndarray:
    return np.argsort(dist, axis=1, kind="stable")


def _reciprocal_neighbors(order, membership, i, k):
    candidates = order[i, : k + 1]
    return candidates[membership[candidates, i]]


def k_reciprocal_rerank(
    dist_qg,
    dist_qq,
    dist_gg,
    params: KReciprocalParams = KReciprocalParams(),
    *,
    backend: str | None = None,
    threads: int | None = None,
) -> np.ndarray:
    """Re-rank a query-gallery distance block with k-reciprocal encoding."""
    full = assemble_union(dist_qg, dist_qq, dist_gg)
    n = full.shape[0]
    num_query = np.asarray(dist_qg).shape[0]
    if params.k1 >= n:
        raise ValidationError(
            f"k1 too large for gallery: k1={params.k1} but the union holds {n} points"
        )

    norm = full**2
    row_max = norm.max(axis=1)
    row_max[row_max == 0.0] = 1.0  # all-zero row: leave it at zero distance
    norm /= row_max[:, None]

    order = _stable_order(norm)
    half = int(round(params.k1 / 2.0))
    rows = np.arange(n)[:, None]
    member_k1 = np.zeros((n, n), dtype=bool)
    member_k1[rows, order[:, : params.k1 + 1]] = True
    member_half = np.zeros((n, n), dtype=bool)
    member_half[rows, order[:, : half + 1]] = True

    half_sets: list[np.ndarray | None] = [None] * n
    encoding = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        reciprocal = _reciprocal_neighbors(order, member_k1, i, params.k1)
        expanded = reciprocal
        for candidate in reciprocal:
            cand_set = half_sets[candidate]
            if cand_set is None:
                cand_set = _reciprocal_neighbors(order, member_half, candidate, half)
                half_sets[candidate] = cand_set
            if np.intersect1d(cand_set, reciprocal).size > (2.0 / 3.0) * cand_set.size:
                expanded = np.append(expanded, cand_set)
        expanded = np.unique(expanded)
        weights = np.exp(-norm[i, expanded])
        encoding[i, expanded] = weights / weights.sum()

    if params.k2 > 1:
        expanded_encoding = np.empty_like(encoding)
        for i in range(n):
            expanded_encoding[i] = encoding[order[i, : params.k2]].mean(axis=0)
        encoding = expanded_encoding

    jaccard = kernels.jaccard_from_encoding(
        encoding, num_query, backend=backend, threads=threads
    )
    final = (1.0 - params.lam) * jaccard + params.lam * norm[:num_query, num_query:]
    return np.maximum(final, 0.0)


def mutual_rank_matrix(full: np.ndarray) -> np.ndarray:
    """Symmetric rank-position distance over a union distance matrix.

    Entry (a, b) is the mean of b's 1-based position in a's ascending-distance
    ordering (self excluded) and the position of a in b's ordering; the
    diagonal is 0. Ties break on the lower index.
    """
    n = full.shape[0]
    order = _stable_order(full)
    positions = np.empty((n, n), dtype=np.float64)
    arange = np.arange(n)
    for a in range(n):
        inverse = np.empty(n, dtype=np.int64)
        inverse[order[a]] = arange
        pos = np.where(inverse > inverse[a], inverse, inverse + 1).astype(np.float64)
        pos[a] = 0.0
        positions[a] = pos
    return (positions + positions.T) / 2.0


def _nearest_neighbors(full: np.ndarray, t: int) -> np.ndarray:
    n = full.shape[0]
    order = _stable_order(full)
    neighbors = np.empty((n, t), dtype=np.intp)
    for a in range(n):
        row = order[a]
        neighbors[a] = row[row != a][:t]
    return neighbors


def ecn_rerank(
    dist_qg,
    dist_qq,
    dist_gg,
    params: EcnParams = EcnParams(),
    *,
    backend: str | None = None,
    threads: int | None = None,
) -> np.ndarray:
    """Re-rank a query-gallery distance block via expanded cross neighborhoods."""
    full = assemble_union(dist_qg, dist_qq, dist_gg)
    n = full.shape[0]
    num_query = np.asarray(dist_qg).shape[0]
    if params.t >= n:
        raise ValidationError(
            f"t too large for gallery: t={params.t} but the union holds {n} points"
        )
    neighbors = _nearest_neighbors(full, params.t)
    pair_dist = mutual_rank_matrix(full) if params.mode == "rank-dist" else full
    return kernels.ecn_accumulate(
        pair_dist, neighbors, num_query, backend=backend, threads=threads
    )
