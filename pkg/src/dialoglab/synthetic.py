"""Seeded toy corpora for sanity checks, demos and tests.

* :func:`random_corpus` - random word dialogs (memorization target).
* :func:`keyword_corpus` - the response repeats a keyword planted in the
  FIRST context utterance, so dropping that utterance destroys the signal.
* :func:`topic_corpus` - context and response share a topic vocabulary (by
  default a single keyword per dialog), which makes true pairs separable from
  randomly re-paired ones.

Every generated utterance carries POS tags (N for nouns, V for verbs, O
otherwise) so the tag-dependent perturbations work on them.
"""

from __future__ import annotations

import numpy as np

from dialoglab.corpus import Corpus, Dialog, Utterance


def _words(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{i}" for i in range(n)]


def _utterance(rng, nouns, verbs, others, length: int) -> Utterance:
    tokens, tags = [], []
    for _ in range(length):
        kind = rng.choice(3, p=(0.4, 0.3, 0.3))
        pool, tag = ((nouns, "N"), (verbs, "V"), (others, "O"))[kind]
        tokens.append(str(pool[rng.integers(len(pool))]))
        tags.append(tag)
    return Utterance(tuple(tokens), tuple(tags))


def random_corpus(
    n_dialogs: int = 20,
    seed: int = 0,
    vocab_size: int = 40,
    turns: tuple[int, int] = (2, 3),
    length: tuple[int, int] = (3, 6),
) -> Corpus:
    """Dialogs of random words; ``turns``/``length`` are inclusive ranges."""
    rng = np.random.default_rng(seed)
    third = max(1, vocab_size // 3)
    nouns, verbs = _words("n", third), _words("v", third)
    others = _words("o", max(1, vocab_size - 2 * third))
    dialogs = []
    for _ in range(n_dialogs):
        m = int(rng.integers(turns[0], turns[1] + 1))
        ctx = tuple(_utterance(rng, nouns, verbs, others, int(rng.integers(length[0], length[1] + 1))) for _ in range(m))
        resp = _utterance(rng, nouns, verbs, others, int(rng.integers(length[0], length[1] + 1)))
        dialogs.append(Dialog(ctx, resp))
    return Corpus(dialogs, "random")


def keyword_corpus(
    n_dialogs: int = 200,
    seed: int = 0,
    n_keywords: int = 8,
    n_filler: int = 12,
    turns: int = 3,
    length: int = 4,
) -> Corpus:
    """The first utterance holds one keyword (``k*``) among filler; later utterances
    are filler only; the response is ``<keyword> ok``."""
    rng = np.random.default_rng(seed)
    keywords = _words("k", n_keywords)
    filler = _words("f", n_filler)
    dialogs = []
    for _ in range(n_dialogs):
        key = keywords[rng.integers(n_keywords)]
        first = [filler[i] for i in rng.integers(n_filler, size=length)]
        first[rng.integers(length)] = key
        utts = [Utterance(tuple(first), tuple("N" if t == key else "O" for t in first))]
        for _ in range(turns - 1):
            toks = tuple(filler[i] for i in rng.integers(n_filler, size=length))
            utts.append(Utterance(toks, ("O",) * length))
        dialogs.append(Dialog(tuple(utts), Utterance((key, "ok"), ("N", "O"))))
    return Corpus(dialogs, "keyword")


def topic_corpus(
    n_dialogs: int = 500,
    seed: int = 0,
    n_topics: int = 100,
    words_per_topic: int = 1,
    n_common: int = 30,
    turns: tuple[int, int] = (1, 3),
    length: tuple[int, int] = (4, 7),
    topic_share: float = 0.35,
) -> Corpus:
    """Each dialog draws one topic; every utterance (context and response) mixes
    that topic's words (fraction ``topic_share``, at least one per utterance)
    with topic-neutral words, so a true response always shares topic vocabulary
    with its context."""
    rng = np.random.default_rng(seed)
    topics = [_words(f"t{k}w", words_per_topic) for k in range(n_topics)]
    common = _words("c", n_common)

    def utt(topic):
        n = int(rng.integers(length[0], length[1] + 1))
        toks, tags = [], []
        for _ in range(n):
            if rng.random() < topic_share:
                toks.append(topic[rng.integers(len(topic))])
                tags.append("N")
            else:
                toks.append(common[rng.integers(n_common)])
                tags.append("V" if rng.random() < 0.5 else "O")
        if "N" not in tags:
            i = int(rng.integers(n))
            toks[i] = topic[rng.integers(len(topic))]
            tags[i] = "N"
        return Utterance(tuple(toks), tuple(tags))

    dialogs = []
    for _ in range(n_dialogs):
        topic = topics[rng.integers(n_topics)]
        m = int(rng.integers(turns[0], turns[1] + 1))
        dialogs.append(Dialog(tuple(utt(topic) for _ in range(m)), utt(topic)))
    return Corpus(dialogs, "topic")
