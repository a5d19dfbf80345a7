"""Single-query cross-camera retrieval evaluation: CMC ranks and mAP.

Protocol summary: for each query, gallery entries of the same identity seen
by the same camera are masked out; junk-id entries (person_id equal to the
configured sentinel, default -1) stay in the ranking as negatives and are
never counted as matches. Queries without any valid match are excluded from
all averages and reported by id. Ranking ties break on the lower gallery
index so results are platform-deterministic.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .embeddings import JUNK_PERSON_ID, DistanceMatrix
from .errors import ComputationError, ValidationError


@dataclass(frozen=True)
class EvalProtocolConfig:
    cross_camera: bool = True
    junk_id: int = JUNK_PERSON_ID
    ranks_reported: tuple[int, ...] = (1, 5, 10, 50)

    def __post_init__(self):
        ranks = tuple(int(r) for r in self.ranks_reported)
        if not ranks or any(r < 1 for r in ranks) or list(ranks) != sorted(ranks):
            raise ValidationError(
                f"ranks_reported must be ascending integers >= 1, got {ranks}"
            )
        object.__setattr__(self, "ranks_reported", ranks)


@dataclass(frozen=True)
class RankedList:
    """Valid gallery indices for one query, sorted by ascending distance."""

    query_id: str
    ordered_gallery: np.ndarray    # indices into the full gallery
    relevance: np.ndarray          # parallel booleans: same person as query


@dataclass(frozen=True)
class EvalReport:
    map: float
    cmc: dict[int, float]
    per_query_ap: tuple[float, ...]
    num_valid_queries: int
    excluded_queries: tuple[str, ...] = field(default_factory=tuple)

    def to_json_dict(self) -> dict:
        return {
            "map": self.map,
            "cmc": {str(rank): value for rank, value in sorted(self.cmc.items())},
            "num_valid_queries": self.num_valid_queries,
            "excluded_queries": list(self.excluded_queries),
        }

    def to_csv(self) -> str:
        """One-row CSV, columns mAP then R-<x> per reported rank, in percent."""
        header = ["mAP"] + [f"R-{rank}" for rank in sorted(self.cmc)]
        row = [_percent(self.map)] + [_percent(self.cmc[rank]) for rank in sorted(self.cmc)]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerow(row)
        return buf.getvalue()


def round_half_away(value: float, decimals: int = 1) -> float:
    """Round half away from zero (table convention; Python's round is half-even)."""
    quantum = Decimal(1).scaleb(-decimals)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def _percent(fraction: float) -> str:
    return f"{round_half_away(100.0 * fraction):.1f}"


def build_valid_mask(
    query_pid: int,
    query_cam: int,
    gallery_pids: np.ndarray,
    gallery_cams: np.ndarray,
    config: EvalProtocolConfig = EvalProtocolConfig(),
) -> np.ndarray:
    """Boolean mask of gallery entries a query may be ranked against.

    Invalid entries are same-person/same-camera pairs (when cross_camera is
    on) and junk-id entries that would otherwise count as a match. Junk-id
    entries for any other query stay valid as non-relevant negatives.
    """
    gallery_pids = np.asarray(gallery_pids)
    gallery_cams = np.asarray(gallery_cams)
    if gallery_pids.shape != gallery_cams.shape:
        raise ValidationError(
            f"gallery pid/cam arrays differ in shape: "
            f"{gallery_pids.shape} vs {gallery_cams.shape}"
        )
    invalid = np.zeros(gallery_pids.shape, dtype=bool)
    if config.cross_camera:
        invalid |= (gallery_pids == query_pid) & (gallery_cams == query_cam)
    invalid |= (gallery_pids == config.junk_id) & (gallery_pids == query_pid)
    return ~invalid


def rank_gallery(dist_row: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Valid gallery indices sorted by ascending distance, ties by index."""
    dist_row = np.asarray(dist_row, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if dist_row.shape != mask.shape:
        raise ValidationError(
            f"distance row and mask differ in shape: {dist_row.shape} vs {mask.shape}"
        )
    if dist_row.size and not np.isfinite(dist_row).all():
        raise ValidationError("distance row contains non-finite values")
    valid = np.flatnonzero(mask)
    order = np.argsort(dist_row[valid], kind="stable")
    return valid[order]


def average_precision(relevance) -> float:
    """Average of precision at each relevant position of an ordered list.

    For the k-th relevant item at 1-based position p_k, precision of the
    prefix ending there is k / p_k; AP is the mean over all m relevant items.
    Accepts a RankedList or any ordered boolean sequence.
    """
    if isinstance(relevance, RankedList):
        relevance = relevance.relevance
    relevance = np.asarray(relevance, dtype=bool)
    hits = np.flatnonzero(relevance)
    if hits.size == 0:
        raise ComputationError("average precision undefined: no relevant entries")
    ranks = hits + 1.0
    return float(np.mean(np.arange(1, hits.size + 1) / ranks))


def evaluate(
    dist,
    query_pids,
    query_cams,
    gallery_pids,
    gallery_cams,
    config: EvalProtocolConfig = EvalProtocolConfig(),
    query_ids=None,
) -> EvalReport:
    """Run the full protocol over a Q x G distance matrix.

    ``dist`` may be a DistanceMatrix (its query labels name excluded queries)
    or a plain array. mAP and CMC average only over queries with at least one
    valid relevant entry; the rest are reported in ``excluded_queries``.
    """
    if isinstance(dist, DistanceMatrix):
        if query_ids is None:
            query_ids = dist.query_ids
        dist = dist.values
    dist = np.asarray(dist, dtype=np.float64)
    query_pids = np.asarray(query_pids, dtype=np.int64)
    query_cams = np.asarray(query_cams, dtype=np.int64)
    gallery_pids = np.asarray(gallery_pids, dtype=np.int64)
    gallery_cams = np.asarray(gallery_cams, dtype=np.int64)
    nq, ng = dist.shape
    if query_pids.shape[0] != nq or query_cams.shape[0] != nq:
        raise ValidationError(
            f"query labels ({query_pids.shape[0]}, {query_cams.shape[0]}) "
            f"do not match {nq} matrix rows"
        )
    if gallery_pids.shape[0] != ng or gallery_cams.shape[0] != ng:
        raise ValidationError(
            f"gallery labels ({gallery_pids.shape[0]}, {gallery_cams.shape[0]}) "
            f"do not match {ng} matrix columns"
        )
    if query_ids is None:
        query_ids = tuple(str(i) for i in range(nq))
    elif len(query_ids) != nq:
        raise ValidationError(f"{len(query_ids)} query ids for {nq} matrix rows")

    aps: list[float] = []
    first_hits: list[int] = []
    excluded: list[str] = []
    for qi in range(nq):
        mask = build_valid_mask(
            query_pids[qi], query_cams[qi], gallery_pids, gallery_cams, config
        )
        order = rank_gallery(dist[qi], mask)
        ranked = RankedList(
            query_id=str(query_ids[qi]),
            ordered_gallery=order,
            relevance=gallery_pids[order] == query_pids[qi],
        )
        hits = np.flatnonzero(ranked.relevance)
        if hits.size == 0:
            excluded.append(ranked.query_id)
            continue
        aps.append(average_precision(ranked))
        first_hits.append(int(hits[0]) + 1)
    if not aps:
        raise ComputationError("no evaluable queries")
    hits_arr = np.array(first_hits)
    cmc = {
        rank: float(np.mean(hits_arr <= rank)) for rank in config.ranks_reported
    }
    return EvalReport(
        map=float(np.mean(aps)),
        cmc=cmc,
        per_query_ap=tuple(aps),
        num_valid_queries=len(aps),
        excluded_queries=tuple(excluded),
    )


def relative_drop(base: float, value: float) -> float:
    """Change from base to value as a percentage, one decimal place."""
    if not base > 0:
        raise ValidationError(f"relative drop needs a positive base, got {base}")
    return round_half_away(100.0 * (value - base) / base)
