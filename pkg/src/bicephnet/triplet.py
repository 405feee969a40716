"""Euclidean distances, online semi-hard mining and the margin triplet loss."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import kernels
from .errors import ShapeError, ValidationError

DEFAULT_MARGIN = 0.2


class MiningStrategy(str, Enum):
    SEMI_HARD = "semihard"


@dataclass
class MiningConfig:
    margin: float = DEFAULT_MARGIN
    strategy: MiningStrategy = MiningStrategy.SEMI_HARD

    def __post_init__(self):
        self.margin = float(self.margin)
        if not np.isfinite(self.margin) or self.margin <= 0:
            raise ValidationError(f"margin must be finite and positive, got {self.margin}")
        self.strategy = MiningStrategy(self.strategy)


@dataclass
class EmbeddingBatch:
    embeddings: np.ndarray
    subject_ids: np.ndarray
    class_labels: np.ndarray = None

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2:
            raise ShapeError(f"embeddings must be 2-D, got {self.embeddings.shape}")
        self.subject_ids = np.asarray(self.subject_ids)
        if self.subject_ids.shape != (len(self.embeddings),):
            raise ValidationError(
                f"need one subject id per row ({len(self.embeddings)}), got shape {self.subject_ids.shape}"
            )
        if self.class_labels is not None:
            self.class_labels = np.asarray(self.class_labels)

    def __len__(self):
        return len(self.embeddings)

    def group_codes(self) -> np.ndarray:
        """Subject ids mapped to dense int64 codes (kernels compare integers)."""
        if self.subject_ids.dtype.kind == "O" and any(s is None for s in self.subject_ids):
            raise ValidationError("subject id must not be None")
        _, codes = np.unique(self.subject_ids, return_inverse=True)
        return codes.astype(np.int64).reshape(-1)


@dataclass
class TripletSet:
    triples: np.ndarray = field(default_factory=lambda: np.empty((0, 3), dtype=np.int64))
    margin_used: float = DEFAULT_MARGIN

    def __len__(self):
        return len(self.triples)

    def as_set(self) -> set:
        return {tuple(int(v) for v in t) for t in self.triples}


def pairwise_distances(batch) -> np.ndarray:
    """B x B Euclidean (not squared) distance matrix."""
    X = batch.embeddings if isinstance(batch, EmbeddingBatch) else np.asarray(batch, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("embeddings contain non-finite values")
    return kernels.pairwise_distances(X)


def mine_semihard(batch: EmbeddingBatch, config: MiningConfig | None = None, distances=None) -> TripletSet:
    """Every (anchor, positive, negative) inside the semi-hard band.

    Positives share the anchor's subject, negatives belong to any other
    subject. All in-band negatives are kept for every anchor/positive pair.
    """
    config = config or MiningConfig()
    codes = batch.group_codes()
    D = pairwise_distances(batch) if distances is None else np.asarray(distances, dtype=np.float64)
    triples = kernels.semihard_triples(D, codes, config.margin)
    return TripletSet(triples=triples, margin_used=config.margin)


def triplet_loss(batch: EmbeddingBatch, triples: TripletSet, margin: float | None = None, distances=None):
    """Mean hinge over triples and its gradient w.r.t. the embedding rows.

    Empty triplet sets give loss 0 and a zero gradient.
    """
    margin = triples.margin_used if margin is None else float(margin)
    X = batch.embeddings
    idx = np.asarray(triples.triples, dtype=np.int64).reshape(-1, 3)
    if idx.size and (idx.min() < 0 or idx.max() >= len(X)):
        raise ValidationError(f"triplet index out of range for batch of {len(X)}")
    if len(idx) == 0:
        return 0.0, np.zeros_like(X)
    D = pairwise_distances(X) if distances is None else distances
    loss, grad = kernels.triplet_hinge(X, D, idx, margin)
    return float(loss), grad
