import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dialoglab.errors import ParseError, ValidationError
from dialoglab.metrics import (
    COLUMNS,
    FileEmbeddings,
    MetricReport,
    RandomEmbeddings,
    distinct_n,
    embedding_average,
    evaluate,
    format_table,
    greedy_idf_f1,
    greedy_idf_scores,
    greedy_matching,
    roc_auc,
    sample_negatives,
    save_embeddings,
    train_unreferenced,
    vector_extrema,
)
from dialoglab.metrics.learned import UnreferencedScorer
from dialoglab.synthetic import topic_corpus
from oracles import o_average, o_cos, o_distinct, o_extrema, o_greedy, o_idf_f1, o_vecs

WORDS = [f"w{i}" for i in range(30)]


@pytest.fixture(scope="module")
def prov():
    p = RandomEmbeddings(dim=16, seed=7)
    rng = np.random.default_rng(0)
    p.fit_idf([list(rng.choice(WORDS[:20], 5)) for _ in range(40)])
    return p


def random_pairs(n, seed=1):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        yield list(rng.choice(WORDS, rng.integers(1, 8))), list(rng.choice(WORDS, rng.integers(1, 8)))


class TestDistinct:
    def test_repeated_unigram(self):
        assert distinct_n([["a", "a", "a"]], 1) == pytest.approx(1 / 3)

    def test_all_bigrams_distinct(self):
        assert distinct_n([["a", "b"], ["c", "d"]], 2) == 1.0

    def test_no_ngrams(self):
        with pytest.raises(ValidationError):
            distinct_n([["a"]], 2)

    def test_matches_oracle(self):
        rng = np.random.default_rng(2)
        rs = [list(rng.choice(WORDS[:8], rng.integers(1, 6))) for _ in range(50)]
        for n in (1, 2):
            assert abs(distinct_n(rs, n) - o_distinct(rs, n)) < 1e-12

    @given(st.lists(st.lists(st.sampled_from("abcd"), min_size=2, max_size=5), min_size=1, max_size=8), st.randoms())
    def test_order_invariant_and_bounded(self, rs, rnd):
        shuffled = rs[:]
        rnd.shuffle(shuffled)
        for n in (1, 2):
            assert distinct_n(rs, n) == distinct_n(shuffled, n) <= 1.0


class TestSimilarityOracles:
    @pytest.mark.parametrize(
        "metric,oracle",
        [
            (embedding_average, o_average),
            (vector_extrema, o_extrema),
            (greedy_matching, o_greedy),
            (greedy_idf_f1, o_idf_f1),
        ],
    )
    def test_hundred_pairs(self, prov, metric, oracle):
        for h, r in random_pairs(100):
            assert abs(metric(h, r, prov) - oracle(h, r, prov)) < 1e-9

    @pytest.mark.parametrize("metric", [embedding_average, vector_extrema, greedy_matching, greedy_idf_f1])
    def test_identical_is_maximal(self, prov, metric):
        for h, _ in random_pairs(30, seed=3):
            assert metric(h, h, prov) == 1.0

    def test_negated_vectors(self):
        p = FileEmbeddings({"a": np.array([1.0, 2.0]), "b": np.array([-1.0, -2.0])})
        assert embedding_average(["a"], ["b"], p) == -1.0

    def test_single_token_extrema_is_cosine(self, prov):
        assert vector_extrema(["w1"], ["w2"], prov) == pytest.approx(o_cos(*o_vecs(["w1", "w2"], prov)), abs=1e-12)

    def test_extrema_three_tokens(self):
        p = FileEmbeddings({"a": np.array([1.0, -3.0, 2.0]), "b": np.array([-2.0, 1.0, -2.0]), "c": np.array([0.5, 2.0, 1.0])})
        # per-dimension largest magnitude, ties to the positive: [-2, -3, 2]
        expected = o_cos([-2.0, -3.0, 2.0], [0.5, 2.0, 1.0])
        assert vector_extrema(["a", "b", "c"], ["c"], p) == pytest.approx(expected, abs=1e-15)

    def test_greedy_two_by_three(self):
        p = FileEmbeddings({"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0]), "c": np.array([1.0, 1.0]), "d": np.array([-1.0, 0.5])})
        h, r = ["a", "b"], ["c", "d", "a"]
        s = math.sqrt(0.5)
        forward = (1.0 + max(s, o_cos([0, 1], [-1, 0.5]))) / 2
        backward = (max(s, s) + max(o_cos([-1, 0.5], [1, 0]), o_cos([-1, 0.5], [0, 1])) + 1.0) / 3
        assert greedy_matching(h, r, p) == pytest.approx((forward + backward) / 2, abs=1e-15)

    def test_subset_direction_is_one(self, prov):
        from dialoglab.metrics.reference import greedy_direction

        assert greedy_direction(["w1", "w2"], ["w3", "w2", "w1"], prov).mean() == 1.0

    @given(st.lists(st.sampled_from(WORDS), min_size=1, max_size=6), st.lists(st.sampled_from(WORDS), min_size=1, max_size=6))
    def test_greedy_symmetric(self, h, r):
        p = RandomEmbeddings(dim=8, seed=1)
        assert greedy_matching(h, r, p) == greedy_matching(r, h, p)

    def test_orthogonal_disjoint_gives_half(self):
        p = FileEmbeddings({"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0])})
        assert greedy_idf_f1(["a"], ["b"], p) == 0.5

    def test_weighted_three_tokens(self):
        p = FileEmbeddings({"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0]), "c": np.array([1.0, 1.0])})
        p.fit_idf([["a"], ["a", "b"], ["c"]])
        assert greedy_idf_f1(["a", "b"], ["c"], p) == pytest.approx(o_idf_f1(["a", "b"], ["c"], p), abs=1e-15)

    def test_zero_idf_falls_back_to_uniform(self):
        p = FileEmbeddings({"a": np.array([1.0, 0.0]), "b": np.array([0.6, 0.8])})
        p.fit_idf([["a", "b"]] * 3)
        # idf(w) = log(4/4) = 0 for both words
        prec, rec, _ = greedy_idf_scores(["a", "b"], ["b"], p)
        assert prec == pytest.approx(((1 + 0.6) / 2 + 1.0) / 2, abs=1e-15)

    def test_empty_input(self, prov):
        with pytest.raises(ValidationError):
            embedding_average([], ["w1"], prov)


class TestProviders:
    def test_random_deterministic(self):
        a, b = RandomEmbeddings(8, 3), RandomEmbeddings(8, 3)
        np.testing.assert_array_equal(a.vector("hi"), b.vector("hi"))
        assert not np.array_equal(a.vector("hi"), RandomEmbeddings(8, 4).vector("hi"))

    def test_unknown_share_unk_vector(self):
        p = RandomEmbeddings(8, 3, vocabulary=["a"])
        np.testing.assert_array_equal(p.vector("x"), p.vector("y"))

    def test_file_round_trip(self, tmp_path):
        p = RandomEmbeddings(5, 2)
        path = save_embeddings(p, ["a", "b", "<unk>"], tmp_path / "e.txt")
        q = FileEmbeddings.from_file(path)
        np.testing.assert_array_equal(q.vector("a"), p.vector("a"))
        np.testing.assert_array_equal(q.vector("zzz"), p.vector("<unk>"))

    def test_file_errors(self, tmp_path):
        (tmp_path / "e.txt").write_text("a 1 2\nb 1\n")
        with pytest.raises(ParseError) as info:
            FileEmbeddings.from_file(tmp_path / "e.txt")
        assert info.value.line == 2

    def test_idf_formula(self):
        p = RandomEmbeddings(4).fit_idf([["a", "b"], ["a"], ["c"]])
        assert p.idf("a") == pytest.approx(math.log(4 / 3)) and p.idf("zz") == pytest.approx(math.log(4))


@pytest.fixture(scope="module")
def trained():
    corpus = topic_corpus(500, seed=11)
    prov = RandomEmbeddings(32, seed=5)
    train, held = corpus.dialogs[:400], corpus.dialogs[400:]
    return train_unreferenced(train, prov, seed=0), held


class TestLearned:
    def test_held_out_auc(self, trained):
        scorer, held = trained
        rng = np.random.default_rng(9)
        neg = sample_negatives(len(held), rng)
        pos = [scorer(d.context, d.response.tokens) for d in held]
        negs = [scorer(d.context, held[j].response.tokens) for d, j in zip(held, neg)]
        assert roc_auc(pos, negs) >= 0.9
        assert np.mean([p > n for p, n in zip(pos, negs)]) >= 0.9

    def test_output_range_untrained(self):
        m = UnreferencedScorer(6, seed=1)
        s = m.score_vectors(np.random.default_rng(0).normal(size=(20, 6)) * 100, np.random.default_rng(1).normal(size=(20, 6)))
        assert ((s >= 0) & (s <= 1)).all()

    def test_deterministic(self):
        corpus = topic_corpus(30, seed=1)
        a = train_unreferenced(corpus, RandomEmbeddings(8), epochs=3)
        b = train_unreferenced(corpus, RandomEmbeddings(8), epochs=3)
        assert a.losses == b.losses

    def test_too_small(self):
        with pytest.raises(ValidationError):
            train_unreferenced(topic_corpus(1), RandomEmbeddings(8))

    @given(st.integers(2, 50), st.integers(0, 1000))
    def test_negatives_differ(self, n, seed):
        neg = sample_negatives(n, np.random.default_rng(seed))
        assert (neg != np.arange(n)).all() and neg.min() >= 0 and neg.max() < n

    def test_auc_oracle(self):
        rng = np.random.default_rng(4)
        pos, neg = rng.integers(0, 5, 30).astype(float), rng.integers(0, 5, 40).astype(float)
        brute = np.mean([1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg])
        assert roc_auc(pos, neg) == pytest.approx(brute, abs=1e-12)


class TestReport:
    def test_identity_row(self, prov):
        outs = [h for h, _ in random_pairs(10, seed=5)]
        rep = evaluate(outs, outs, None, prov)
        assert (rep.average, rep.extrema, rep.greedy, rep.greedy_idf_f1) == (1.0, 1.0, 1.0, 1.0)

    def test_matches_composed_oracles(self, prov):
        pairs = list(random_pairs(10, seed=6))
        hyps, refs = [h for h, _ in pairs], [r for _, r in pairs]
        rep = evaluate(hyps, refs, None, prov)
        assert rep.dist1 == pytest.approx(o_distinct(hyps, 1), abs=1e-12)
        for field, oracle in (("average", o_average), ("extrema", o_extrema), ("greedy", o_greedy), ("greedy_idf_f1", o_idf_f1)):
            assert getattr(rep, field) == pytest.approx(np.mean([oracle(h, r, prov) for h, r in pairs]), abs=1e-9)

    def test_misaligned(self, prov):
        with pytest.raises(ValidationError):
            evaluate([["a"]], [["a"], ["b"]], None, prov)

    def test_table_header(self, prov):
        rep = evaluate([["w1", "w2"]], [["w1"]], None, prov)
        header = format_table([("HRED", rep)]).splitlines()[0].split()
        assert header == ["Model", "Dist-1", "Dist-2", "Average", "Extrema", "Greedy", "Greedy-IDF-F1", "Learned"]
        assert list(COLUMNS) == list(rep.values())

    def test_json_round_trip(self, prov):
        rep = evaluate([["w1", "w2"]], [["w1"]], [["w3"]], prov, scorer=lambda c, r: 0.25)
        assert MetricReport.from_dict(rep.to_dict()) == rep and rep.learned_score == 0.25
