"""Unreferenced relevance scorer trained by negative sampling.

Context and response are each mean-pooled word vectors scaled to unit
length.  The score is ``sigmoid(MLP([c * r; (c - r)^2; c^T M r]))`` with ``M``
initialized to the identity, so an untrained scorer already ranks by cosine.
Only interaction features reach the MLP; feeding it the raw vectors lets it
memorize individual dialogs instead of learning relevance.  Training minimizes
the margin ranking loss ``max(0, margin - s(c, r) + s(c, r'))`` where ``r'`` is
the response of a uniformly drawn other dialog.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from dialoglab.corpus import Dialog
from dialoglab.errors import ValidationError
from dialoglab.metrics.embeddings import EmbeddingProvider
from dialoglab.numerics import Linear, Module, Tensor, no_grad, ops, stream
from dialoglab.numerics.optim import Adam


def pool(tokens: Sequence[str], provider: EmbeddingProvider) -> np.ndarray:
    """Unit-length mean word vector (zero for empty input or a zero mean)."""
    if len(tokens) == 0:
        return np.zeros(provider.dim)
    mean = provider.matrix(tokens).mean(axis=0)
    norm = np.linalg.norm(mean)
    return mean / norm if norm > 0 else mean


def _context_tokens(context) -> list[str]:
    """Accepts a flat token list or a list of utterances (token lists / Utterance)."""
    out: list[str] = []
    for item in context:
        if isinstance(item, str):
            out.append(item)
        else:
            out.extend(getattr(item, "tokens", item))
    return out


class UnreferencedScorer(Module):
    def __init__(self, dim: int, hidden: int = 64, seed: int = 0):
        super().__init__()
        rng = stream(seed, "scorer-init")
        self.dim = dim
        self.bilinear = Tensor(np.eye(dim), requires_grad=True)
        self.hidden = Linear(2 * dim + 1, hidden, rng)
        self.out = Linear(hidden, 1, rng)

    def logits(self, c: Tensor, r: Tensor) -> Tensor:
        """``c``, ``r``: [N, dim] pooled vectors -> [N] pre-sigmoid scores."""
        quad = ops.sum(ops.mul(ops.matmul(c, self.bilinear), r), axis=1, keepdims=True)
        diff = ops.sub(c, r)
        features = ops.concat([ops.mul(c, r), ops.mul(diff, diff), quad], axis=1)
        return ops.reshape(self.out(ops.tanh(self.hidden(features))), (-1,))

    def score_vectors(self, c: np.ndarray, r: np.ndarray) -> np.ndarray:
        with no_grad():
            return ops.sigmoid(self.logits(Tensor(np.atleast_2d(c)), Tensor(np.atleast_2d(r)))).data


@dataclass
class TrainedScorer:
    """Callable ``scorer(context, response) -> [0, 1]``."""

    model: UnreferencedScorer
    provider: EmbeddingProvider
    losses: list[float]

    def __call__(self, context, response: Sequence[str]) -> float:
        c = pool(_context_tokens(context), self.provider)
        r = pool(list(response), self.provider)
        return float(self.model.score_vectors(c, r)[0])

    def score_batch(self, contexts, responses) -> np.ndarray:
        if len(contexts) != len(responses):
            raise ValidationError("contexts and responses must be aligned")
        if len(contexts) == 0:
            return np.zeros(0)
        c = np.stack([pool(_context_tokens(x), self.provider) for x in contexts])
        r = np.stack([pool(list(y), self.provider) for y in responses])
        return self.model.score_vectors(c, r)


def sample_negatives(n: int, rng: np.random.Generator) -> np.ndarray:
    """For each index, a uniformly drawn different index."""
    if n < 2:
        raise ValidationError("negative sampling needs at least two dialogs")
    draw = rng.integers(0, n - 1, size=n)
    return draw + (draw >= np.arange(n))


def _pairs(corpus) -> tuple[list[list[str]], list[list[str]]]:
    contexts, responses = [], []
    for item in corpus:
        if isinstance(item, Dialog):
            contexts.append(_context_tokens(item.context))
            responses.append(list(item.response.tokens))
        else:
            ctx, resp = item
            contexts.append(_context_tokens(ctx))
            responses.append(list(getattr(resp, "tokens", resp)))
    return contexts, responses


def train_unreferenced(
    corpus,
    provider: EmbeddingProvider,
    seed: int = 0,
    epochs: int = 200,
    hidden: int = 64,
    lr: float = 1e-2,
    margin: float = 0.5,
    batch_size: int = 128,
) -> TrainedScorer:
    """Train on ``corpus``: Dialogs or ``(context, response)`` pairs (token lists)."""
    contexts, responses = _pairs(corpus)
    n = len(contexts)
    if n < 2:
        raise ValidationError("the unreferenced scorer needs at least two dialogs for negatives")
    c = np.stack([pool(x, provider) for x in contexts])
    r = np.stack([pool(y, provider) for y in responses])
    model = UnreferencedScorer(provider.dim, hidden, seed)
    opt = Adam(model.parameters(), lr)
    rng = stream(seed, "negatives")
    losses = []
    for _ in range(epochs):
        neg = sample_negatives(n, rng)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            ct = Tensor(c[idx])
            pos = ops.sigmoid(model.logits(ct, Tensor(r[idx])))
            negs = ops.sigmoid(model.logits(ct, Tensor(r[neg[idx]])))
            loss = ops.mean(ops.relu(ops.add(ops.sub(negs, pos), margin)))
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        losses.append(total / n)
    model.eval()
    return TrainedScorer(model, provider, losses)


def roc_auc(positive: Sequence[float], negative: Sequence[float]) -> float:
    """Probability a random positive outscores a random negative (ties count half)."""
    pos = np.asarray(positive, dtype=float)
    neg = np.asarray(negative, dtype=float)
    if pos.size == 0 or neg.size == 0:
        raise ValidationError("AUC needs at least one positive and one negative score")
    scores = np.concatenate([pos, neg])
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))
