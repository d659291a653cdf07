"""Dialog corpora: JSON-lines ingestion, vocabulary, flattening, batching, statistics.

Corpus file format (UTF-8, one JSON object per line)::

    {"context": ["hi there", "how are you ?"],
     "response": "fine thanks",
     "persona": ["i like tea"],                      # optional
     "pos": [["O","O"], ["O","V","O","O","O"], ["O","O"]],  # optional
     "persona_pos": [["O","V","N"]]}                 # optional

Utterances are pre-tokenised on whitespace.  ``pos`` is parallel to the raw
context utterances followed by the response; tags are ``N`` (noun), ``V``
(verb) or ``O`` (other).  Persona sentences are prepended to the context.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from dialoglab.errors import ParseError, ValidationError

PAD, SOS, EOS, UNK, SEP = 0, 1, 2, 3, 4
RESERVED = ("<pad>", "<sos>", "<eos>", "<unk>", "[SEP]")
UNK_TOKEN = RESERVED[UNK]
POS_TAGS = ("N", "V", "O")


@dataclass(frozen=True)
class Utterance:
    tokens: tuple[str, ...]
    pos_tags: tuple[str, ...] | None = None
    speaker: str | None = None

    def __post_init__(self):
        if not self.tokens:
            raise ValidationError("utterance has no tokens")
        if self.pos_tags is not None:
            if len(self.pos_tags) != len(self.tokens):
                raise ValidationError(
                    f"{len(self.pos_tags)} POS tags for {len(self.tokens)} tokens in {' '.join(self.tokens)!r}"
                )
            bad = set(self.pos_tags) - set(POS_TAGS)
            if bad:
                raise ValidationError(f"unknown POS tags {sorted(bad)}; expected N, V or O")

    def __len__(self):
        return len(self.tokens)

    @classmethod
    def from_text(cls, text: str, pos=None, lowercase: bool = True, speaker=None) -> Utterance:
        if lowercase:
            text = text.lower()
        return cls(tuple(text.split()), None if pos is None else tuple(pos), speaker)


@dataclass(frozen=True)
class Dialog:
    """Context utterances (persona already prepended) and the gold response."""

    context: tuple[Utterance, ...]
    response: Utterance
    persona: tuple[Utterance, ...] = ()

    def __post_init__(self):
        if not self.context:
            raise ValidationError("dialog has an empty context")

    @property
    def tagged(self) -> bool:
        return all(u.pos_tags is not None for u in self.context)

    def with_context(self, context: Sequence[Utterance]) -> Dialog:
        return Dialog(tuple(context), self.response, self.persona)


@dataclass(frozen=True)
class Corpus:
    dialogs: tuple[Dialog, ...]
    name: str = "corpus"

    def __post_init__(self):
        object.__setattr__(self, "dialogs", tuple(self.dialogs))

    def __len__(self):
        return len(self.dialogs)

    def __iter__(self):
        return iter(self.dialogs)

    def __getitem__(self, i):
        return self.dialogs[i]


# -- loading ------------------------------------------------------------------------


def _utterances(texts, tags, lowercase, line, what):
    if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
        raise ParseError(f'"{what}" must be an array of strings', line)
    out = []
    for i, text in enumerate(texts):
        try:
            out.append(Utterance.from_text(text, None if tags is None else tags[i], lowercase))
        except ValidationError as exc:
            raise ValidationError(f"line {line}: {what}[{i}]: {exc}") from None
    return out


def parse_record(record: dict, line: int = 0, lowercase: bool = True) -> Dialog:
    if not isinstance(record, dict):
        raise ParseError("record is not a JSON object", line)
    for key in ("context", "response"):
        if key not in record:
            raise ParseError(f'missing "{key}"', line)
    raw_context = record["context"]
    response = record["response"]
    if not isinstance(response, str):
        raise ParseError('"response" must be a string', line)
    pos = record.get("pos")
    if pos is not None and (not isinstance(pos, list) or len(pos) != len(raw_context) + 1):
        raise ParseError('"pos" must hold one tag array per context utterance plus the response', line)
    persona_texts = record.get("persona") or []
    persona_pos = record.get("persona_pos")
    if persona_pos is not None and len(persona_pos) != len(persona_texts):
        raise ParseError('"persona_pos" must be parallel to "persona"', line)

    persona = _utterances(persona_texts, persona_pos, lowercase, line, "persona")
    context = _utterances(raw_context, None if pos is None else pos[:-1], lowercase, line, "context")
    if not context:
        raise ValidationError(f"line {line}: empty context")
    try:
        resp = Utterance.from_text(response, None if pos is None else pos[-1], lowercase)
    except ValidationError as exc:
        raise ValidationError(f"line {line}: response: {exc}") from None
    return Dialog(tuple(persona + context), resp, tuple(persona))


def load_corpus(path, lowercase: bool = True, format: str = "jsonl") -> Corpus:
    if format != "jsonl":
        raise ValueError(f"unsupported corpus format {format!r}")
    path = Path(path)
    dialogs = []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
            dialogs.append(parse_record(record, lineno, lowercase))
    return Corpus(tuple(dialogs), path.stem)


def dialog_to_record(dialog: Dialog) -> dict:
    n_persona = len(dialog.persona)
    record = {
        "context": [" ".join(u.tokens) for u in dialog.context[n_persona:]],
        "response": " ".join(dialog.response.tokens),
    }
    if n_persona:
        record["persona"] = [" ".join(u.tokens) for u in dialog.persona]
    if dialog.tagged and dialog.response.pos_tags is not None:
        record["pos"] = [list(u.pos_tags) for u in dialog.context[n_persona:]] + [list(dialog.response.pos_tags)]
        if n_persona:
            record["persona_pos"] = [list(u.pos_tags) for u in dialog.context[:n_persona]]
    return record


def save_corpus(corpus: Iterable[Dialog], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for d in corpus:
            fh.write(json.dumps(dialog_to_record(d), ensure_ascii=False) + "\n")


# -- vocabulary --------------------------------------------------------------------------


class Vocabulary:
    """Token/id bijection with reserved ids 0..4 (PAD, SOS, EOS, UNK, SEP)."""

    def __init__(self, tokens: Sequence[str], freqs: dict[str, int] | None = None):
        tokens = list(tokens)
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            tokens = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        if len(set(tokens)) != len(tokens):
            raise ValidationError("vocabulary tokens are not unique")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}
        self.freqs = dict(freqs or {})

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int], strip_special: bool = False) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip_special and i in (PAD, SOS, EOS):
                if i == EOS:
                    break
                continue
            out.append(self.itos[i])
        return out

    def to_list(self) -> list[str]:
        return list(self.itos)


def build_vocab(corpus: Iterable[Dialog], max_size: int = 50000, min_freq: int = 1) -> Vocabulary:
    """Most frequent tokens first, ties in lexicographic order; reserved ids count toward ``max_size``."""
    if max_size <= len(RESERVED):
        raise ValidationError(f"max_size must exceed {len(RESERVED)}")
    counts = Counter()
    for d in corpus:
        for u in d.context:
            counts.update(u.tokens)
        counts.update(d.response.tokens)
    ranked = sorted((t for t, c in counts.items() if c >= min_freq and t not in RESERVED), key=lambda t: (-counts[t], t))
    kept = ranked[: max_size - len(RESERVED)]
    return Vocabulary(list(RESERVED) + kept, {t: counts[t] for t in kept})


# -- encoding ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EncodedDialog:
    context: tuple[tuple[int, ...], ...]
    response: tuple[int, ...]
    source: Dialog | None = field(default=None, compare=False)


def truncate(dialog: Dialog, max_turns: int | None = None, max_len: int | None = None) -> Dialog:
    """Keep the most recent ``max_turns`` utterances and the first ``max_len`` tokens of each."""
    context = dialog.context if max_turns is None else dialog.context[-max_turns:]
    if max_len is not None:
        context = tuple(_clip(u, max_len) for u in context)
        response = _clip(dialog.response, max_len)
    else:
        response = dialog.response
    return Dialog(tuple(context), response, dialog.persona)


def _clip(u: Utterance, n: int) -> Utterance:
    if len(u) <= n:
        return u
    return Utterance(u.tokens[:n], None if u.pos_tags is None else u.pos_tags[:n], u.speaker)


def encode_dialog(dialog: Dialog, vocab: Vocabulary, max_turns=None, max_len=None) -> EncodedDialog:
    d = truncate(dialog, max_turns, max_len)
    return EncodedDialog(
        tuple(tuple(vocab.encode(u.tokens)) for u in d.context),
        tuple(vocab.encode(d.response.tokens)),
        d,
    )


def flatten(dialog: Dialog | EncodedDialog, vocab: Vocabulary | None = None) -> list[int]:
    """``u1 [SEP] u2 [SEP] ... um`` as ids, no trailing separator."""
    if isinstance(dialog, Dialog):
        utts = [vocab.encode(u.tokens) for u in dialog.context]
    else:
        utts = [list(u) for u in dialog.context]
    out: list[int] = []
    for j, ids in enumerate(utts):
        if j:
            out.append(SEP)
        out.extend(ids)
    return out


@dataclass
class Batch:
    """Right-padded id arrays for a list of encoded dialogs."""

    ctx: np.ndarray  # [B, M, L] word ids per context utterance
    ctx_mask: np.ndarray  # [B, M, L]
    utt_mask: np.ndarray  # [B, M]
    n_utts: np.ndarray  # [B]
    flat: np.ndarray  # [B, T] separator-joined context
    flat_mask: np.ndarray  # [B, T]
    resp: np.ndarray  # [B, R] response ids (no SOS/EOS)
    resp_mask: np.ndarray  # [B, R]
    dec_in: np.ndarray  # [B, R+1] SOS + response
    dec_out: np.ndarray  # [B, R+1] response + EOS
    dialogs: list[EncodedDialog]

    @property
    def size(self) -> int:
        return self.ctx.shape[0]


def make_batch(dialogs: Sequence[EncodedDialog]) -> Batch:
    if not dialogs:
        raise ValidationError("cannot batch zero dialogs")
    b = len(dialogs)
    m = max(len(d.context) for d in dialogs)
    ln = max(len(u) for d in dialogs for u in d.context)
    flats = [flatten(d) for d in dialogs]
    t = max(len(f) for f in flats)
    r = max(max(len(d.response) for d in dialogs), 1)

    ctx = np.full((b, m, ln), PAD, dtype=np.int64)
    utt_mask = np.zeros((b, m), dtype=bool)
    flat = np.full((b, t), PAD, dtype=np.int64)
    resp = np.full((b, r), PAD, dtype=np.int64)
    dec_in = np.full((b, r + 1), PAD, dtype=np.int64)
    dec_out = np.full((b, r + 1), PAD, dtype=np.int64)
    for i, d in enumerate(dialogs):
        for j, u in enumerate(d.context):
            ctx[i, j, : len(u)] = u
            utt_mask[i, j] = True
        flat[i, : len(flats[i])] = flats[i]
        resp[i, : len(d.response)] = d.response
        dec_in[i, : len(d.response) + 1] = (SOS, *d.response)
        dec_out[i, : len(d.response) + 1] = (*d.response, EOS)
    return Batch(
        ctx=ctx,
        ctx_mask=ctx != PAD,
        utt_mask=utt_mask,
        n_utts=utt_mask.sum(axis=1),
        flat=flat,
        flat_mask=flat != PAD,
        resp=resp,
        resp_mask=resp != PAD,
        dec_in=dec_in,
        dec_out=dec_out,
        dialogs=list(dialogs),
    )


# -- statistics ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusStats:
    name: str
    turn_max: int
    turn_avg: float
    turn_min: int
    length_max: int
    length_avg: float
    length_min: int
    vocab: int

    def to_dict(self) -> dict:
        return {
            "dataset": self.name,
            "turn": {"max": self.turn_max, "avg": round(self.turn_avg, 2), "min": self.turn_min},
            "length": {"max": self.length_max, "avg": round(self.length_avg, 2), "min": self.length_min},
            "vocab": self.vocab,
        }


def stats(corpus: Corpus | Sequence[Dialog], name: str | None = None) -> CorpusStats:
    """Turn counts are context sizes; lengths are token counts of context utterances."""
    dialogs = list(corpus)
    if not dialogs:
        raise ValidationError("statistics of an empty corpus")
    turns = np.array([len(d.context) for d in dialogs])
    lengths = np.array([len(u) for d in dialogs for u in d.context])
    vocab = set()
    for d in dialogs:
        for u in d.context:
            vocab.update(u.tokens)
        vocab.update(d.response.tokens)
    return CorpusStats(
        name or getattr(corpus, "name", "corpus"),
        int(turns.max()),
        float(turns.mean()),
        int(turns.min()),
        int(lengths.max()),
        float(lengths.mean()),
        int(lengths.min()),
        len(vocab),
    )


def format_stats(rows: Sequence[CorpusStats]) -> str:
    header = f"{'Dataset':<16}|{'Turn max':>9}{'avg':>8}{'min':>6} |{'Length max':>11}{'avg':>8}{'min':>6} |{'Vocab':>9}"
    lines = [header, "-" * len(header)]
    for s in rows:
        lines.append(
            f"{s.name:<16}|{s.turn_max:>9}{s.turn_avg:>8.2f}{s.turn_min:>6} |"
            f"{s.length_max:>11}{s.length_avg:>8.2f}{s.length_min:>6} |{s.vocab:>9,}"
        )
    return "\n".join(lines)


def split_corpus(dialogs: Sequence[Dialog], seed: int, train_fraction: float = 0.9):
    """Seeded shuffle then split; both halves are non-empty when there are >= 2 dialogs."""
    dialogs = list(dialogs)
    if len(dialogs) < 2:
        raise ValidationError("need at least two dialogs to split into train/validation")
    order = np.random.default_rng(seed).permutation(len(dialogs))
    cut = min(max(1, int(round(train_fraction * len(dialogs)))), len(dialogs) - 1)
    return [dialogs[i] for i in order[:cut]], [dialogs[i] for i in order[cut:]]
