"""Diversity (distinct-n) and embedding-similarity metrics.

Sentences are token lists.  Every cosine treats a zero vector as similarity 0
and bitwise-identical (negated) nonzero vectors as exactly 1 (-1).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from dialoglab.errors import ValidationError
from dialoglab.metrics.embeddings import EmbeddingProvider
from dialoglab.numerics.kernels import max_cosine_rows, signed_extrema


def ngrams(tokens: Sequence[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def distinct_n(responses: Sequence[Sequence[str]], n: int) -> float:
    """Distinct n-grams across all responses over the total n-gram count."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    grams = [g for r in responses for g in ngrams(list(r), n)]
    if not grams:
        raise ValidationError(f"no {n}-grams in the responses")
    return len(set(grams)) / len(grams)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.sqrt(a @ a))
    nb = float(np.sqrt(b @ b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    if np.array_equal(a, b):
        return 1.0
    if np.array_equal(a, -b):
        return -1.0
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def _nonempty(hyp, ref):
    if len(hyp) == 0 or len(ref) == 0:
        raise ValidationError("hypothesis and reference must both be non-empty")


def embedding_average(hyp: Sequence[str], ref: Sequence[str], provider: EmbeddingProvider) -> float:
    """Cosine between the mean word vectors."""
    _nonempty(hyp, ref)
    return cosine(provider.matrix(hyp).mean(axis=0), provider.matrix(ref).mean(axis=0))


def extrema_vector(tokens: Sequence[str], provider: EmbeddingProvider) -> np.ndarray:
    return signed_extrema(np.ascontiguousarray(provider.matrix(tokens)))


def vector_extrema(hyp: Sequence[str], ref: Sequence[str], provider: EmbeddingProvider) -> float:
    """Cosine between per-dimension signed extrema (largest magnitude, ties positive)."""
    _nonempty(hyp, ref)
    return cosine(extrema_vector(hyp, provider), extrema_vector(ref, provider))


def greedy_direction(src: Sequence[str], dst: Sequence[str], provider: EmbeddingProvider) -> np.ndarray:
    """Best cosine of every ``src`` token against the ``dst`` tokens."""
    a = np.ascontiguousarray(provider.matrix(src))
    b = np.ascontiguousarray(provider.matrix(dst))
    return max_cosine_rows(a, b)


def greedy_matching(hyp: Sequence[str], ref: Sequence[str], provider: EmbeddingProvider) -> float:
    """Average of the hyp->ref and ref->hyp greedy scores."""
    _nonempty(hyp, ref)
    forward = float(greedy_direction(hyp, ref, provider).mean())
    backward = float(greedy_direction(ref, hyp, provider).mean())
    return (forward + backward) / 2.0


def _weighted_mean(values: np.ndarray, weights: np.ndarray) -> float:
    if weights.sum() <= 0.0:
        weights = np.ones_like(values)
    return float((weights * values).sum() / weights.sum())


def greedy_idf_scores(hyp: Sequence[str], ref: Sequence[str], provider: EmbeddingProvider):
    """(precision, recall, F1) from idf-weighted greedy matches, cosines mapped to
    ``(1 + cos) / 2``.  A sentence whose idf weights are all zero is weighted uniformly."""
    _nonempty(hyp, ref)
    p = _weighted_mean((1.0 + greedy_direction(hyp, ref, provider)) / 2.0, provider.idf_weights(hyp))
    r = _weighted_mean((1.0 + greedy_direction(ref, hyp, provider)) / 2.0, provider.idf_weights(ref))
    f1 = 0.0 if p + r == 0.0 else 2.0 * p * r / (p + r)
    return p, r, f1


def greedy_idf_f1(hyp: Sequence[str], ref: Sequence[str], provider: EmbeddingProvider) -> float:
    return greedy_idf_scores(hyp, ref, provider)[2]
