"""Cross-view pseudo-pair mining over narration embeddings.

For every FPV clip the single most narration-similar TPV clip is selected
by exhaustive cosine-similarity scan (ties break to the smallest TPV
index).  Pairs can then be gated by a similarity threshold, or by keeping
a top fraction, and summarized as a bucket histogram.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import BadEdgesError, DimMismatchError, EmptyCorpusError
from .numerics import ZERO_NORM_EPS

DEFAULT_BUCKET_EDGES = (-1.0, 0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass(frozen=True)
class PseudoPair:
    fpv_index: int
    tpv_index: int
    similarity: float


@dataclass
class PairBatch:
    pairs: list
    selected: np.ndarray  # bool mask, same length as pairs

    @property
    def n_selected(self) -> int:
        return int(np.count_nonzero(self.selected))


@dataclass
class SimilarityHistogram:
    bucket_edges: tuple
    counts: np.ndarray
    fractions: np.ndarray


def mine_pseudo_pairs(fpv_samples, tpv_samples) -> list[PseudoPair]:
    """Exhaustive-scan argmax of narration cosine similarity, one pair per FPV clip."""
    if len(fpv_samples) == 0 or len(tpv_samples) == 0:
        raise EmptyCorpusError("both corpora must be nonempty")
    dim = fpv_samples[0].narration.shape[0]
    for s in fpv_samples:
        if s.narration.shape[0] != dim:
            raise DimMismatchError("inconsistent FPV narration dims")
    for s in tpv_samples:
        if s.narration.shape[0] != dim:
            raise DimMismatchError(f"narration dims differ: {s.narration.shape[0]} vs {dim}")
    tpv_vecs = [s.narration for s in tpv_samples]
    tpv_norms = [float(np.linalg.norm(v)) for v in tpv_vecs]
    if any(n < ZERO_NORM_EPS for n in tpv_norms):
        raise DimMismatchError("zero-norm TPV narration")
    pairs = []
    for i, fs in enumerate(fpv_samples):
        fv = fs.narration
        fn = float(np.linalg.norm(fv))
        if fn < ZERO_NORM_EPS:
            raise DimMismatchError("zero-norm FPV narration")
        best_j = 0
        best_sim = -math.inf
        for j, (tv, tn) in enumerate(zip(tpv_vecs, tpv_norms)):
            sim = float(np.dot(fv, tv) / (fn * tn))
            if sim > best_sim:
                best_sim = sim
                best_j = j
        pairs.append(PseudoPair(fpv_index=i, tpv_index=best_j, similarity=best_sim))
    return pairs


def select_pairs(pairs, theta: float) -> PairBatch:
    """Keep pairs whose similarity is >= theta; order preserved."""
    if not -1.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [-1, 1], got {theta}")
    mask = np.array([p.similarity >= theta for p in pairs], dtype=bool)
    return PairBatch(pairs=list(pairs), selected=mask)


def select_top_fraction(pairs, fraction: float) -> PairBatch:
    """Alternative gate: keep the ceil(fraction * n) most similar pairs."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    n = len(pairs)
    k = int(math.ceil(fraction * n))
    mask = np.zeros(n, dtype=bool)
    if k > 0 and n > 0:
        order = sorted(range(n), key=lambda i: (-pairs[i].similarity, i))
        mask[order[:k]] = True
    return PairBatch(pairs=list(pairs), selected=mask)


def similarity_histogram(pairs, bucket_edges=DEFAULT_BUCKET_EDGES) -> SimilarityHistogram:
    """Count pairs in half-open buckets [e_i, e_{i+1}); the last bucket is closed."""
    edges = tuple(float(e) for e in bucket_edges)
    if len(edges) < 2:
        raise BadEdgesError("need at least two edges")
    if any(a >= b for a, b in zip(edges, edges[1:])):
        raise BadEdgesError("edges must be strictly ascending")
    if edges[0] > -1.0 or edges[-1] < 1.0:
        raise BadEdgesError("edges must cover [-1, 1]")
    n_buckets = len(edges) - 1
    counts = np.zeros(n_buckets, dtype=np.int64)
    for p in pairs:
        s = p.similarity
        if s == edges[-1]:
            counts[n_buckets - 1] += 1
            continue
        idx = int(np.searchsorted(edges, s, side="right")) - 1
        counts[idx] += 1
    total = int(counts.sum())
    fractions = counts / total if total > 0 else np.zeros(n_buckets)
    return SimilarityHistogram(bucket_edges=edges, counts=counts, fractions=fractions)
