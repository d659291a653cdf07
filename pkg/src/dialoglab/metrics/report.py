"""Corpus-level evaluation and table rendering."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from dialoglab.errors import ValidationError
from dialoglab.metrics.embeddings import EmbeddingProvider
from dialoglab.metrics.reference import (
    distinct_n,
    embedding_average,
    greedy_idf_f1,
    greedy_matching,
    vector_extrema,
)

# field name -> column header, in table order
COLUMNS = {
    "dist1": "Dist-1",
    "dist2": "Dist-2",
    "average": "Average",
    "extrema": "Extrema",
    "greedy": "Greedy",
    "greedy_idf_f1": "Greedy-IDF-F1",
    "learned_score": "Learned",
}


@dataclass
class MetricReport:
    """Corpus means in natural units: dist in [0, 1], cosine metrics in [-1, 1],
    greedy-idf-F1 and the learned score in [0, 1].  ``learned_score`` is None
    when no scorer was supplied."""

    dist1: float
    dist2: float
    average: float
    extrema: float
    greedy: float
    greedy_idf_f1: float
    learned_score: float | None = None
    n: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> MetricReport:
        return cls(**data)

    def values(self) -> dict[str, float | None]:
        return {k: getattr(self, k) for k in COLUMNS}


def _mean(values: list[float]) -> float:
    return float(np.mean(values)) if values else 0.0


def _distinct_or_zero(responses, n: int) -> float:
    """Dist-n for a report row; a set with no n-grams at all scores 0 rather than failing."""
    if not any(len(r) >= n for r in responses):
        return 0.0
    return distinct_n(responses, n)


def evaluate(
    outputs: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    contexts: Sequence | None,
    provider: EmbeddingProvider,
    scorer: Callable | None = None,
) -> MetricReport:
    """Score generated ``outputs`` against ``references`` (token lists, aligned).

    Sentence-level similarities are averaged over pairs where both sides are
    non-empty; an empty generation scores 0 on every similarity.
    """
    n = len(outputs)
    if len(references) != n or (contexts is not None and len(contexts) != n):
        raise ValidationError(
            f"misaligned inputs: {n} outputs, {len(references)} references"
            + ("" if contexts is None else f", {len(contexts)} contexts")
        )
    if n == 0:
        raise ValidationError("nothing to evaluate")
    if scorer is not None and contexts is None:
        raise ValidationError("the learned scorer needs contexts")
    avg, ext, gre, idf = [], [], [], []
    for hyp, ref in zip(outputs, references):
        hyp, ref = list(hyp), list(ref)
        if not ref:
            raise ValidationError("empty reference response")
        if not hyp:
            for bucket in (avg, ext, gre, idf):
                bucket.append(0.0)
            continue
        avg.append(embedding_average(hyp, ref, provider))
        ext.append(vector_extrema(hyp, ref, provider))
        gre.append(greedy_matching(hyp, ref, provider))
        idf.append(greedy_idf_f1(hyp, ref, provider))
    learned = None
    if scorer is not None:
        learned = _mean([float(scorer(c, list(h))) for c, h in zip(contexts, outputs)])
    return MetricReport(
        dist1=_distinct_or_zero(outputs, 1),
        dist2=_distinct_or_zero(outputs, 2),
        average=_mean(avg),
        extrema=_mean(ext),
        greedy=_mean(gre),
        greedy_idf_f1=_mean(idf),
        learned_score=learned,
        n=n,
    )


def _cell(value, marks: str = "") -> str:
    return ("-" if value is None else f"{100.0 * value:.2f}") + marks


def format_table(rows: Sequence[tuple[str, MetricReport]], marks: dict | None = None) -> str:
    """Aligned text table, metrics scaled by 100 with two decimals.

    ``marks`` optionally maps ``(row name, field)`` to a suffix such as ``*``.
    """
    marks = marks or {}
    header = ["Model"] + list(COLUMNS.values())
    body = [
        [name] + [_cell(rep.values()[k], marks.get((name, k), "")) for k in COLUMNS]
        for name, rep in rows
    ]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = []
    for r in [header] + body:
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"
