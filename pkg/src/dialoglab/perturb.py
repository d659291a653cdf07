"""Test-time context perturbations and the performance-decrease report.

Utterance-level kinds reorder or remove whole context utterances; word-level
kinds act inside every context utterance (persona sentences included, since
they are part of the context).  The response is never touched.  POS tags move
with their tokens.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from dialoglab.corpus import Dialog, Utterance, Vocabulary, encode_dialog
from dialoglab.errors import ConfigError, MissingAnnotationError, ValidationError

UTTERANCE_KINDS = ("shuffle", "reverse", "drop_first", "drop_last", "truncate")
WORD_KINDS = ("word_shuffle", "word_reverse", "word_drop", "noun_drop", "verb_drop")
KINDS = UTTERANCE_KINDS + WORD_KINDS
IDENTITY = "identity"  # control, not one of the ten

DISPLAY = {
    "shuffle": "Shuffle",
    "reverse": "Reverse",
    "drop_first": "DropFirst",
    "drop_last": "DropLast",
    "truncate": "Truncate",
    "word_shuffle": "WordShuffle",
    "word_reverse": "WordReverse",
    "word_drop": "WordDrop",
    "noun_drop": "NounDrop",
    "verb_drop": "VerbDrop",
    IDENTITY: "Identity",
}


def check_kind(kind: str) -> str:
    if kind not in KINDS and kind != IDENTITY:
        raise ConfigError(f"unknown perturbation {kind!r}; valid: {', '.join(KINDS)}")
    return kind


def _rng(seed, kind: str) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    entropy = list(seed) if isinstance(seed, (tuple, list)) else [int(seed)]
    return np.random.default_rng(np.random.SeedSequence(entropy + [zlib.crc32(kind.encode())]))


def _take(u: Utterance, idx) -> Utterance:
    idx = list(idx)
    tags = None if u.pos_tags is None else tuple(u.pos_tags[i] for i in idx)
    return Utterance(tuple(u.tokens[i] for i in idx), tags, u.speaker)


def word_drop_count(length: int, ratio: float = 0.3) -> int:
    """Tokens removed from an utterance of ``length``: floor(ratio * L), leaving at least one."""
    return min(int(np.floor(ratio * length)), length - 1)


def _drop_tag(u: Utterance, tag: str, kind: str) -> Utterance:
    if u.pos_tags is None:
        raise MissingAnnotationError(f"{kind} needs POS tags but utterance {' '.join(u.tokens)!r} has none")
    keep = [i for i, t in enumerate(u.pos_tags) if t != tag]
    return _take(u, keep or [0])


def perturb(dialog: Dialog, kind: str, seed=0, k: int = 1, drop_ratio: float = 0.3) -> Dialog:
    """Apply one perturbation to the context of ``dialog``.

    ``seed`` may be an int, a tuple of ints or a Generator.  ``k`` is the
    number of trailing utterances kept by ``truncate``; ``drop_ratio`` the
    share of tokens removed by ``word_drop``.
    """
    check_kind(kind)
    ctx = list(dialog.context)
    rng = _rng(seed, kind)
    if kind == IDENTITY:
        out = ctx
    elif kind == "shuffle":
        out = [ctx[i] for i in rng.permutation(len(ctx))]
    elif kind == "reverse":
        out = ctx[::-1]
    elif kind == "drop_first":
        out = ctx[1:] if len(ctx) > 1 else ctx
    elif kind == "drop_last":
        out = ctx[:-1] if len(ctx) > 1 else ctx
    elif kind == "truncate":
        if k < 1:
            raise ConfigError("truncate keeps at least one utterance (k >= 1)")
        out = ctx[-k:]
    elif kind == "word_shuffle":
        out = [_take(u, rng.permutation(len(u))) for u in ctx]
    elif kind == "word_reverse":
        out = [_take(u, range(len(u) - 1, -1, -1)) for u in ctx]
    elif kind == "word_drop":
        out = []
        for u in ctx:
            dropped = set(rng.choice(len(u), size=word_drop_count(len(u), drop_ratio), replace=False).tolist())
            out.append(_take(u, [i for i in range(len(u)) if i not in dropped]))
    elif kind == "noun_drop":
        out = [_drop_tag(u, "N", kind) for u in ctx]
    else:  # verb_drop
        out = [_drop_tag(u, "V", kind) for u in ctx]
    return dialog.with_context(out)


def perturb_corpus(dialogs: Sequence[Dialog], kind: str, seed: int = 0, **kwargs) -> list[Dialog]:
    """Dialog ``i`` is perturbed with seed ``(seed, i)``."""
    return [perturb(d, kind, (seed, i), **kwargs) for i, d in enumerate(dialogs)]


# suite ------------------------------------------------------------------------------------

Generator = Callable[[Sequence[Dialog]], list[list[str]]]
Metric = Callable[[list[list[str]], list[list[str]], list], float]


def model_generator(model, vocab: Vocabulary, max_len: int | None = None, batch_size: int = 32) -> Generator:
    """Greedy decoding wrapped to map Dialogs to output token lists (specials stripped)."""

    def generate(dialogs: Sequence[Dialog]) -> list[list[str]]:
        encoded = [encode_dialog(d, vocab) for d in dialogs]
        out = []
        for start in range(0, len(encoded), batch_size):
            for trace in model.generate_batch(encoded[start : start + batch_size], max_len):
                out.append(vocab.decode(trace.tokens, strip_special=True))
        return out

    return generate


def report_metrics(names: Sequence[str], provider, scorer=None) -> dict[str, Metric]:
    """Metric callables backed by :func:`dialoglab.metrics.evaluate` fields."""
    from dialoglab.metrics import COLUMNS, evaluate

    for name in names:
        if name not in COLUMNS:
            raise ConfigError(f"unknown metric {name!r}; valid: {', '.join(COLUMNS)}")
    if "learned_score" in names and scorer is None:
        raise ConfigError("learned_score needs a trained scorer")
    last: list = [None, None]  # (outputs object, report) of the most recent call

    def make(name):
        def metric(outputs, references, contexts):
            if last[0] is not outputs:
                last[:] = [outputs, evaluate(outputs, references, contexts, provider, scorer)]
            return getattr(last[1], name)

        return metric

    return {name: make(name) for name in names}


@dataclass
class PerturbationReport:
    baseline: dict[str, float]
    scores: dict[str, dict[str, float]]  # kind -> metric -> score
    deltas: dict[str, dict[str, float]] = field(default_factory=dict)
    average: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.deltas:
            self.deltas = {
                kind: {m: s - self.baseline[m] for m, s in row.items()} for kind, row in self.scores.items()
            }
        if not self.average:
            kinds = list(self.deltas)
            self.average = {m: float(np.mean([self.deltas[k][m] for k in kinds])) for m in self.baseline}

    @property
    def kinds(self) -> list[str]:
        return list(self.scores)

    @property
    def metrics(self) -> list[str]:
        return list(self.baseline)

    def to_dict(self) -> dict:
        return {
            "baseline": self.baseline,
            "scores": self.scores,
            "deltas": self.deltas,
            "average": self.average,
            "kinds": self.kinds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> PerturbationReport:
        return cls(data["baseline"], data["scores"], data["deltas"], data["average"])

    def format(self) -> str:
        """Rows = perturbations (then the average), columns = metrics; values x100."""
        header = ["Perturbation"] + self.metrics
        rows = [["Baseline"] + [f"{100 * self.baseline[m]:.2f}" for m in self.metrics]]
        rows += [[DISPLAY[k]] + [f"{100 * self.deltas[k][m]:+.2f}" for m in self.metrics] for k in self.kinds]
        rows.append(["Average"] + [f"{100 * self.average[m]:+.2f}" for m in self.metrics])
        return _align([header] + rows)


def _align(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join([r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]).rstrip() for r in rows]
    return "\n".join(lines) + "\n"


def perturbation_suite(
    generate: Generator,
    dialogs: Sequence[Dialog],
    metrics: dict[str, Metric],
    kinds: Sequence[str] = KINDS,
    seed: int = 0,
) -> PerturbationReport:
    """Score the generator on the original and on each perturbed test set.

    Metrics receive ``(outputs, references, contexts)`` where ``contexts`` are
    always the ORIGINAL contexts: the perturbation is a probe of the model, so
    the learned relevance scorer judges replies against what was really said.
    """
    dialogs = list(dialogs)
    if not dialogs:
        raise ValidationError("perturbation suite needs at least one dialog")
    if not metrics:
        raise ValidationError("perturbation suite needs at least one metric")
    kinds = [check_kind(k) for k in kinds]
    if any(k in ("noun_drop", "verb_drop") for k in kinds) and not all(d.tagged for d in dialogs):
        raise MissingAnnotationError("noun_drop/verb_drop need a POS-tagged corpus")
    references = [list(d.response.tokens) for d in dialogs]
    contexts = [d.context for d in dialogs]

    def score(test_set) -> dict[str, float]:
        outputs = generate(test_set)
        if len(outputs) != len(test_set):
            raise ValidationError("generator returned a different number of outputs than dialogs")
        return {name: float(fn(outputs, references, contexts)) for name, fn in metrics.items()}

    baseline = score(dialogs)
    scores = {kind: score(perturb_corpus(dialogs, kind, seed)) for kind in kinds}
    return PerturbationReport(baseline, scores)


def format_decrease_matrix(
    cells: dict[tuple[str, str], float],
    base_of: dict[str, str] | None = None,
    models: Sequence[str] | None = None,
    datasets: Sequence[str] | None = None,
) -> str:
    """Rows = models, columns = datasets, cells = average decrease x100.

    A row whose model has an entry in ``base_of`` is marked against its base
    model: ``↑`` when its decrease is larger (it leans on the context more),
    ``↓`` when smaller, ``~`` when equal at the displayed precision.
    """
    base_of = base_of or {}
    models = list(models) if models is not None else list(dict.fromkeys(m for m, _ in cells))
    datasets = list(datasets) if datasets is not None else list(dict.fromkeys(d for _, d in cells))
    rows = [["Model"] + list(datasets)]
    for m in models:
        row = [m]
        for d in datasets:
            value = cells.get((m, d))
            if value is None:
                row.append("-")
                continue
            text = f"{100 * value:.2f}"
            base = base_of.get(m)
            if base is not None and (base, d) in cells:
                ref = f"{100 * cells[(base, d)]:.2f}"
                mark = "~" if text == ref else ("↑" if float(text) < float(ref) else "↓")
                text += " " + mark
            row.append(text)
        rows.append(row)
    return _align(rows)
