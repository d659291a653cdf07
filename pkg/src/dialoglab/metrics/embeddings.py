"""Static word-vector providers for the embedding-based metrics.

A provider maps tokens to fixed vectors and carries an idf table fitted on a
reference corpus.  Two sources are supported: a seeded random table (every
token gets its own reproducible Gaussian vector) and a plain-text file with
one ``token v1 v2 ... vd`` line per word.
"""

from __future__ import annotations

import math
import zlib
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from dialoglab.corpus import UNK_TOKEN
from dialoglab.errors import ParseError, ValidationError


class EmbeddingProvider:
    """Base class: subclasses implement :meth:`_lookup` for known tokens."""

    dim: int

    def __init__(self):
        self._idf: dict[str, float] = {}
        self._idf_default = 1.0
        self._cache: dict[str, np.ndarray] = {}

    def _lookup(self, token: str) -> np.ndarray:
        raise NotImplementedError

    def vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            vec = self._lookup(token)
            vec.setflags(write=False)
            self._cache[token] = vec
        return vec

    def matrix(self, tokens: Sequence[str]) -> np.ndarray:
        if len(tokens) == 0:
            return np.zeros((0, self.dim))
        return np.stack([self.vector(t) for t in tokens])

    # idf -------------------------------------------------------------------------------

    def fit_idf(self, references: Iterable[Sequence[str]]) -> EmbeddingProvider:
        """``idf(w) = log((N + 1) / (df(w) + 1))`` over ``N`` reference sentences."""
        docs = [set(r) for r in references]
        n = len(docs)
        df = Counter(w for d in docs for w in d)
        self._idf = {w: math.log((n + 1) / (c + 1)) for w, c in df.items()}
        self._idf_default = math.log(n + 1)
        return self

    @property
    def has_idf(self) -> bool:
        return bool(self._idf)

    def idf(self, token: str) -> float:
        return self._idf.get(token, self._idf_default)

    def idf_weights(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.idf(t) for t in tokens], dtype=float)

    def idf_table(self) -> dict[str, float]:
        return dict(self._idf)


def token_seed(seed: int, token: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, zlib.crc32(token.encode("utf-8"))])


class RandomEmbeddings(EmbeddingProvider):
    """Token vectors drawn from N(0, I) with a generator seeded by ``(seed, token)``.

    With a ``vocabulary``, tokens outside it share the vector of the UNK token.
    """

    def __init__(self, dim: int = 64, seed: int = 0, vocabulary: Iterable[str] | None = None):
        super().__init__()
        if dim < 1:
            raise ValidationError("embedding dimension must be >= 1")
        self.dim = dim
        self.seed = seed
        self.vocabulary = None if vocabulary is None else frozenset(vocabulary)

    def _lookup(self, token: str) -> np.ndarray:
        if self.vocabulary is not None and token not in self.vocabulary:
            token = UNK_TOKEN
        return np.random.default_rng(token_seed(self.seed, token)).standard_normal(self.dim)


class FileEmbeddings(EmbeddingProvider):
    """Vectors read from a table; unknown tokens get the file's UNK row if it has
    one, else the zero vector (which every cosine treats as similarity 0)."""

    def __init__(self, table: dict[str, np.ndarray]):
        super().__init__()
        if not table:
            raise ValidationError("embedding table is empty")
        dims = {v.shape for v in table.values()}
        if len(dims) != 1:
            raise ValidationError("embedding vectors have inconsistent dimensions")
        self.table = {k: np.asarray(v, dtype=float) for k, v in table.items()}
        self.dim = next(iter(dims))[0]
        self.unk = self.table.get(UNK_TOKEN, np.zeros(self.dim))

    def _lookup(self, token: str) -> np.ndarray:
        return self.table.get(token, self.unk).copy()

    @classmethod
    def from_file(cls, path) -> FileEmbeddings:
        table: dict[str, np.ndarray] = {}
        dim = None
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) < 2:
                    raise ParseError(f"expected 'token v1 ... vd', got {line.strip()!r}", line_no)
                try:
                    vec = np.array([float(x) for x in parts[1:]])
                except ValueError:
                    raise ParseError(f"non-numeric vector entry for {parts[0]!r}", line_no) from None
                if dim is None:
                    dim = vec.size
                elif vec.size != dim:
                    raise ParseError(f"vector for {parts[0]!r} has {vec.size} entries, expected {dim}", line_no)
                table[parts[0]] = vec
        if not table:
            raise ParseError(f"{path}: no embeddings found")
        return cls(table)


def save_embeddings(provider: EmbeddingProvider, tokens: Iterable[str], path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for tok in tokens:
            fh.write(tok + " " + " ".join(repr(float(x)) for x in provider.vector(tok)) + "\n")
    return path
