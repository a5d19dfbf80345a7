"""Retrieval evaluation, re-ranking and view-gated fusion for re-id embeddings."""

from .embeddings import (
    JUNK_PERSON_ID,
    DistanceMatrix,
    EmbeddingSet,
    cosine_distance_matrix,
    euclidean_distance_matrix,
    l2_normalize,
    load_embeddings,
    write_embeddings,
)
from .errors import ComputationError, FileFormatError, ReidkitError, ValidationError
from .metrics import (
    EvalProtocolConfig,
    EvalReport,
    average_precision,
    build_valid_mask,
    evaluate,
    rank_gallery,
    relative_drop,
)
from .rerank import EcnParams, KReciprocalParams, ecn_rerank, k_reciprocal_rerank

__version__ = "0.1.0"

__all__ = [
    "JUNK_PERSON_ID",
    "DistanceMatrix",
    "EmbeddingSet",
    "EvalProtocolConfig",
    "EvalReport",
    "EcnParams",
    "KReciprocalParams",
    "ReidkitError",
    "ValidationError",
    "FileFormatError",
    "ComputationError",
    "average_precision",
    "build_valid_mask",
    "cosine_distance_matrix",
    "ecn_rerank",
    "euclidean_distance_matrix",
    "evaluate",
    "k_reciprocal_rerank",
    "l2_normalize",
    "load_embeddings",
    "rank_gallery",
    "relative_drop",
    "write_embeddings",
]
