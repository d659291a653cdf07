"""End-to-end acceptance suite: one test (or parametrized family) per criterion.

Every test records its outcome before asserting, and the terminal summary
prints one PASS/FAIL line per criterion.
"""

import json
import time

import numpy as np
import pytest

from conftest import record
from dialoglab import training
from dialoglab.cli import main
from dialoglab.corpus import Dialog, Utterance, build_vocab, encode_dialog, make_batch, save_corpus
from dialoglab.metrics import (
    RandomEmbeddings,
    distinct_n,
    embedding_average,
    greedy_idf_f1,
    greedy_matching,
    roc_auc,
    sample_negatives,
    train_unreferenced,
    vector_extrema,
)
from dialoglab.models import ARCHITECTURES, ModelConfig, build_model, load_checkpoint
from dialoglab.perturb import KINDS, model_generator, perturb, perturbation_suite
from dialoglab.synthetic import keyword_corpus, random_corpus, topic_corpus
from dialoglab.training import PlateauScheduler, TrainConfig, token_accuracy, train
from dialoglab.verify import GRADCHECK_TOLERANCE, tiny_gradcheck
from oracles import o_average, o_distinct, o_extrema, o_greedy, o_idf_f1

pytestmark = pytest.mark.acceptance

ALL = list(ARCHITECTURES)


# 1 ---------------------------------------------------------------------------------------


def test_c1_gradient_correctness():
    start = time.perf_counter()
    results = [tiny_gradcheck(arch) for arch in ALL]
    elapsed = time.perf_counter() - start
    worst = max(results, key=lambda r: r.max_error)
    failing = [r.architecture for r in results if not r.max_error < GRADCHECK_TOLERANCE]
    ok = not failing and elapsed < 120.0
    record(1, ok, f"12 architectures, worst {worst.max_error:.2e} ({worst.architecture}), {elapsed:.1f}s"
           + (f", failing {failing}" if failing else ""))
    assert not failing
    assert elapsed < 120.0


# 2 ---------------------------------------------------------------------------------------


def test_c2_hred_wa_equals_hran():
    corpus = random_corpus(100, seed=30, vocab_size=30, turns=(1, 4), length=(1, 7))
    vocab = build_vocab(corpus)
    batch = make_batch([encode_dialog(d, vocab) for d in corpus])
    a = build_model(ModelConfig("hred_wa", len(vocab), hidden=16, embed=8), 30)
    b = build_model(ModelConfig("hran", len(vocab), hidden=16, embed=8), 7)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters(), strict=True):
        assert na == nb
        pb.data = pa.data.copy()
    gap = float(np.abs(a.forward(batch).logits.data - b.forward(batch).logits.data).max())
    record(2, gap <= 1e-12, f"max |logit difference| {gap:.1e} over 100 dialogs")
    assert gap <= 1e-12


# 3 ---------------------------------------------------------------------------------------

OVERFIT_CONFIG = TrainConfig(batch_size=1, epochs=500, early_stop_patience=500)


@pytest.fixture(scope="module")
def overfit_data():
    corpus = random_corpus(20, seed=1)
    vocab = build_vocab(corpus)
    return vocab, [encode_dialog(d, vocab) for d in corpus]


@pytest.mark.parametrize("arch", ALL)
def test_c3_overfit(arch, overfit_data):
    vocab, data = overfit_data
    # default training settings with the widths scaled from 512/256 to 64/32 (the latent width by the same 1/8)
    model = build_model(ModelConfig(arch, len(vocab), hidden=64, embed=32, latent_dim=8), OVERFIT_CONFIG.seed)
    reached = {}

    def stop(m, rec):
        if rec.epoch % 10:
            return False
        acc = token_accuracy(m, data)
        m.train()
        reached[rec.epoch] = acc
        return acc >= 0.95

    start = time.perf_counter()
    log = train(model, data, data, OVERFIT_CONFIG, stop_when=stop, restore_best=False)
    elapsed = time.perf_counter() - start
    acc = token_accuracy(model, data)
    ok = acc >= 0.95 and len(log) <= 500 and elapsed <= 300.0
    record(3, ok, f"{arch} {100 * acc:.1f}% at epoch {len(log)} in {elapsed:.0f}s")
    assert acc >= 0.95
    assert elapsed <= 300.0


# 4 ---------------------------------------------------------------------------------------


def test_c4_schedule(monkeypatch):
    history = [3.0, 2.5] + [2.5] * 10 + [2.0] + [2.1] * 25 + [1.0] + [1.0] * 9
    sched = PlateauScheduler(1e-4)
    lrs = [sched.step(v) for v in history]
    halvings = [round(np.log2(1e-4 / lr)) for lr in lrs]
    exact = all(lr == 1e-4 * 0.5**k for lr, k in zip(lrs, halvings))
    # decays land after exactly 10, 10 and 10 non-improving epochs; the final 9 stay put
    changes = [i for i in range(1, len(lrs)) if lrs[i] != lrs[i - 1]]
    expected_changes = [11, 22, 32]

    # early stopping on a constructed flat validation curve
    monkeypatch.setattr(training, "evaluate_loss", lambda *a, **k: 1.0)
    corpus = random_corpus(4, seed=2, vocab_size=10, turns=(1, 1), length=(1, 2))
    vocab = build_vocab(corpus)
    data = [encode_dialog(d, vocab) for d in corpus]
    model = build_model(ModelConfig("hred", len(vocab), hidden=4, embed=4), 30)
    log = train(model, data, data, TrainConfig(epochs=100, early_stop_patience=5))
    stop_ok = log.stopped_early and len(log) == 6
    lr_column_ok = log.column("lr") == [1e-4] * 6

    ok = exact and changes == expected_changes and lrs[-1] == 1.25e-5 and stop_ok and lr_column_ok
    record(4, ok, f"lr decays at epochs {[c + 1 for c in changes]} to {lrs[-1]:.3g}, "
           f"early stop after {len(log)} epochs on a flat curve")
    assert exact and changes == expected_changes and lrs[-1] == 1.25e-5
    assert stop_ok and lr_column_ok


# 5 ---------------------------------------------------------------------------------------


def test_c5_metric_oracles():
    words = [f"w{i}" for i in range(40)]
    prov = RandomEmbeddings(dim=24, seed=30)
    rng = np.random.default_rng(30)
    prov.fit_idf([list(rng.choice(words, 6)) for _ in range(60)])
    pairs = [(list(rng.choice(words, rng.integers(1, 10))), list(rng.choice(words, rng.integers(1, 10)))) for _ in range(100)]
    worst = 0.0
    for metric, oracle in (
        (embedding_average, o_average),
        (vector_extrema, o_extrema),
        (greedy_matching, o_greedy),
        (greedy_idf_f1, o_idf_f1),
    ):
        for h, r in pairs:
            worst = max(worst, abs(metric(h, r, prov) - oracle(h, r, prov)))
    hyps = [h for h, _ in pairs]
    for n in (1, 2):
        worst = max(worst, abs(distinct_n(hyps, n) - o_distinct(hyps, n)))
    maximal = all(
        m(h, h, prov) == 1.0 for h in hyps for m in (embedding_average, vector_extrema, greedy_matching, greedy_idf_f1)
    )
    maximal &= distinct_n([["a", "b", "c"]], 1) == 1.0 and distinct_n([["a", "b", "c"]], 2) == 1.0
    record(5, worst < 1e-9 and maximal, f"worst oracle gap {worst:.1e} on 100 pairs, identical inputs maximal: {maximal}")
    assert worst < 1e-9
    assert maximal


# 6 ---------------------------------------------------------------------------------------


def test_c6_learned_metric():
    dialogs = topic_corpus(500, seed=30).dialogs
    train_set, held = dialogs[:400], dialogs[400:]
    prov = RandomEmbeddings(dim=32, seed=30)
    start = time.perf_counter()
    scorer = train_unreferenced(train_set, prov, seed=30)
    elapsed = time.perf_counter() - start
    neg = sample_negatives(len(held), np.random.default_rng(30))
    contexts = [d.context for d in held]
    pos = scorer.score_batch(contexts, [d.response.tokens for d in held])
    negs = scorer.score_batch(contexts, [held[j].response.tokens for j in neg])
    auc = roc_auc(pos, negs)
    record(6, auc >= 0.9 and elapsed < 60.0, f"held-out AUC {auc:.3f}, trained in {elapsed:.1f}s")
    assert auc >= 0.9
    assert elapsed < 60.0


# 7 ---------------------------------------------------------------------------------------


def random_dialogs(n: int, seed: int):
    rng = np.random.default_rng(seed)
    tags = np.array(["N", "V", "O"])
    out = []
    for _ in range(n):
        ctx = []
        for _ in range(rng.integers(1, 6)):
            length = int(rng.integers(1, 15))
            ctx.append(Utterance(tuple(f"t{i}" for i in rng.integers(0, 12, length)), tuple(tags[rng.integers(0, 3, length)])))
        out.append(Dialog(tuple(ctx), Utterance(("resp",), ("O",))))
    return out


def test_c7_perturbation_semantics():
    from collections import Counter

    failures = Counter()
    dialogs = random_dialogs(1000, seed=30)
    for i, d in enumerate(dialogs):
        seed = (30, i)
        out = {k: perturb(d, k, seed) for k in KINDS}
        failures["determinism"] += any(perturb(d, k, seed) != out[k] for k in KINDS)
        failures["response untouched"] += any(p.response != d.response for p in out.values())
        failures["shuffle multiset"] += Counter(out["shuffle"].context) != Counter(d.context)
        failures["double reverse"] += perturb(out["reverse"], "reverse") != d
        failures["double word reverse"] += perturb(out["word_reverse"], "word_reverse") != d
        failures["truncate to one"] += len(out["truncate"].context) != 1
        failures["word drop count"] += any(
            len(new) != max(1, len(old) - int(np.floor(0.3 * len(old))))
            for old, new in zip(d.context, out["word_drop"].context)
        )
    bad = {k: v for k, v in failures.items() if v}
    record(7, not bad, f"1000 dialogs, {len(failures)} properties" + (f", violations {bad}" if bad else ", no violations"))
    assert not bad


# 8 ---------------------------------------------------------------------------------------


def keyword_recall(outputs, references, contexts):
    return float(np.mean([ref[0] in out for out, ref in zip(outputs, references)]))


def train_keyword_model(arch, data, vocab):
    model = build_model(ModelConfig(arch, len(vocab), hidden=32, embed=16, dropout=0.0), 30)
    cfg = TrainConfig(lr=3e-3, batch_size=4, epochs=150, early_stop_patience=150)
    train(model, data, data[:40], cfg, stop_when=lambda m, r: r.train_loss < 0.05)
    return model


def test_c8_perturbation_direction():
    train_set = keyword_corpus(200, seed=30)
    test_set = list(keyword_corpus(100, seed=31))
    vocab = build_vocab(train_set)
    data = [encode_dialog(d, vocab) for d in train_set]
    metrics = {"keyword_recall": keyword_recall}

    def drop(generate):
        rep = perturbation_suite(generate, test_set, metrics, kinds=["drop_first"], seed=30)
        return rep.baseline["keyword_recall"], rep.deltas["drop_first"]["keyword_recall"]

    stub_base, stub_delta = drop(lambda ds: [["k0", "ok"] for _ in ds])
    wa_base, wa_delta = drop(model_generator(train_keyword_model("hred_wa", data, vocab), vocab, 4))
    hred_base, hred_delta = drop(model_generator(train_keyword_model("hred", data, vocab), vocab, 4))
    ok = stub_delta == 0.0 and wa_delta < stub_delta
    record(
        8,
        ok,
        f"drop-first keyword-recall delta: HRED+WA {wa_delta:+.2f} (from {wa_base:.2f}), stub {stub_delta:+.2f}; "
        f"report only: HRED {hred_delta:+.2f} (from {hred_base:.2f})",
    )
    assert stub_delta == 0.0
    assert wa_delta < stub_delta


# 9 ---------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def attention_workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("attention")
    corpus = random_corpus(6, seed=30, turns=(1, 4))
    save_corpus(corpus, root / "dialogs.jsonl")
    return root, corpus


def test_c9_attention_distributions(attention_workspace):
    from dialoglab.models import save_checkpoint

    root, corpus = attention_workspace
    vocab = build_vocab(corpus)
    encoded = [encode_dialog(d, vocab) for d in corpus]
    batch = make_batch(encoded)
    worst, mismatched, vectors = 0.0, [], 0
    for arch in ALL:
        model = build_model(ModelConfig(arch, len(vocab), hidden=16, embed=8, heads=2, latent_dim=4), 30)
        model.eval()
        # teacher-forced records
        for rec in model.forward(batch, record=True).attention:
            for key, w in rec.items():
                rows = w.reshape(-1, w.shape[-1])
                live = rows[rows.sum(axis=1) > 0]
                worst = max(worst, float(np.abs(live.sum(axis=1) - 1.0).max(initial=0.0)))
                vectors += len(live)
        # exported heatmap against the in-memory decode traces
        ckpt = save_checkpoint(root / f"{arch}.ckpt", model, vocab)
        out = root / f"heat_{arch}"
        assert main(["heatmap", "--checkpoint", str(ckpt), "--dialogs", str(root / "dialogs.jsonl"),
                     "--set", "max_decode_len=5", "--out", str(out)]) == 0
        exported = json.loads((out / "heatmap.json").read_text())
        traces = load_checkpoint(ckpt)[0].generate_batch(encoded, 5)
        for d, trace in zip(exported["dialogs"], traces, strict=True):
            if len(d["steps"]) != len(trace.steps):
                mismatched.append(arch)
                continue
            for step, att in zip(d["steps"], trace.steps):
                memory = {
                    "word_weights": None if att.word_weights is None else [w.tolist() for w in att.word_weights],
                    "utterance_weights": None if att.utterance_weights is None else att.utterance_weights.tolist(),
                    "extra": {k: v.tolist() for k, v in att.extra.items()},
                }
                if {k: step[k] for k in memory} != memory:
                    mismatched.append(arch)
                for v in att.vectors():
                    worst = max(worst, abs(float(np.sum(v)) - 1.0))
                    vectors += 1
    ok = worst <= 1e-6 and not mismatched
    record(9, ok, f"{vectors} vectors from 12 architectures, worst |sum - 1| {worst:.1e}, "
           f"heatmap JSON {'equals' if not mismatched else 'differs from'} traces"
           + (f" for {sorted(set(mismatched))}" if mismatched else ""))
    assert worst <= 1e-6
    assert not mismatched


# 10 --------------------------------------------------------------------------------------


def test_c10_reproducibility(tmp_path):
    save_corpus(random_corpus(16, seed=30), tmp_path / "train.jsonl")
    save_corpus(random_corpus(6, seed=31), tmp_path / "test.jsonl")
    (tmp_path / "run.cfg").write_text(
        "hidden = 16\nembed = 8\nheads = 2\nlatent_dim = 4\nepochs = 3\nscorer_epochs = 20\n"
        "max_decode_len = 8\ntrain = train.jsonl\ntest = test.jsonl\n"
    )
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        cfg = str(tmp_path / "run.cfg")
        assert main(["train", "--config", cfg, "--arch", "vhred", "--seed", "30", "--out", str(out)]) == 0
        assert main(["evaluate", "--config", cfg, "--checkpoint", str(out / "vhred" / "best.ckpt"),
                     "--seed", "30", "--out", str(out)]) == 0
        outputs.append((out / "metrics.json").read_bytes())
    same = outputs[0] == outputs[1]
    record(10, same, f"metrics.json byte-identical across two seed-30 train+evaluate runs: {same}")
    assert same
