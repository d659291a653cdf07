import numpy as np
import pytest

from dialoglab.encoders import (
    GRU,
    ContextEncoder,
    SelfAttentionEncoder,
    UtteranceEncoder,
    encode_context,
    encode_context_selfattn,
    encode_utterance,
    gru_step,
)
from dialoglab.errors import ConfigError, DimensionError, ValidationError
from dialoglab.numerics import Embedding, Tensor, grad_check_params, ops


@pytest.fixture
def rng():
    return np.random.default_rng(5)


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def gru_oracle(gru, x, h):
    """Direct recurrence in extended precision."""
    ld = np.longdouble
    hid = gru.d_hidden
    w_ih, w_hh, b_ih, b_hh = (np.asarray(p.data, dtype=ld) for p in (gru.w_ih, gru.w_hh, gru.b_ih, gru.b_hh))
    x, h = np.asarray(x, dtype=ld), np.asarray(h, dtype=ld)
    gi, gh = x @ w_ih + b_ih, h @ w_hh + b_hh
    r = 1 / (1 + np.exp(-(gi[:hid] + gh[:hid])))
    z = 1 / (1 + np.exp(-(gi[hid : 2 * hid] + gh[hid : 2 * hid])))
    n = np.tanh(gi[2 * hid :] + r * gh[2 * hid :])
    return (1 - z) * h + z * n


class TestGruStep:
    def test_zero_weights_halves_state(self, rng):
        gru = GRU(3, 4, rng)
        for p in gru.parameters():
            p.data[...] = 0.0
        h = rng.normal(size=4)
        np.testing.assert_allclose(gru_step(T(rng.normal(size=3)), T(h), gru).data, 0.5 * h, atol=1e-15)

    def test_saturated_update_gate_keeps_state(self, rng):
        gru = GRU(3, 4, rng)
        gru.b_ih.data[4:8] = -50.0
        h = rng.normal(size=4)
        assert np.abs(gru_step(T(rng.normal(size=3)), T(h), gru).data - h).max() < 1e-6

    def test_matches_extended_precision_oracle(self, rng):
        gru = GRU(3, 4, rng)
        x, h = rng.normal(size=3), rng.normal(size=4)
        np.testing.assert_allclose(gru_step(T(x), T(h), gru).data, gru_oracle(gru, x, h).astype(float), atol=1e-15)

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            gru_step(T(np.ones(2)), T(np.ones(4)), GRU(3, 4, rng))


class TestUtteranceEncoder:
    def test_length_one(self, rng):
        emb = Embedding(10, 3, rng)
        enc = UtteranceEncoder(3, 4, 2, True, 0.3, rng)
        enc.eval()
        out = encode_utterance([5], emb, enc)
        assert out.states.shape == (1, 4)
        np.testing.assert_array_equal(out.final.data, out.states.data[0])

    def test_default_width(self, rng):
        emb = Embedding(10, 256, rng)
        enc = UtteranceEncoder(256, 512, 2, True, 0.3, rng)
        enc.eval()
        assert encode_utterance([5, 6, 7], emb, enc).states.shape == (3, 512)

    def test_two_sweep_oracle(self, rng):
        emb = Embedding(10, 3, rng)
        enc = UtteranceEncoder(3, 4, 1, True, 0.0, rng)
        ids = [2, 7, 2]
        out = encode_utterance(ids, emb, enc)
        x = emb.weight.data[ids]
        hf, hb = np.zeros(4), np.zeros(4)
        fwd, bwd = [], [None] * 3
        for t in range(3):
            hf = gru_oracle(enc.fwd0, x[t], hf)
            fwd.append(hf)
        for t in (2, 1, 0):
            hb = gru_oracle(enc.bwd0, x[t], hb)
            bwd[t] = hb
        cat = np.array([np.concatenate([f, b]) for f, b in zip(fwd, bwd)]).astype(float)
        expected = cat @ enc.proj.weight.data + enc.proj.bias.data
        np.testing.assert_allclose(out.states.data, expected, atol=1e-13)
        final = np.concatenate([fwd[-1], bwd[0]]).astype(float) @ enc.proj.weight.data + enc.proj.bias.data
        np.testing.assert_allclose(out.final.data, final, atol=1e-13)

    def test_palindrome_with_tied_directions(self, rng):
        emb = Embedding(10, 3, rng)
        enc = UtteranceEncoder(3, 4, 1, True, 0.0, rng)
        for a, b in zip(enc.fwd0.parameters(), enc.bwd0.parameters()):
            b.data = a.data.copy()
        ids = [4, 8, 4]
        out = encode_utterance(ids, emb, enc)
        # the backward sweep over a palindrome retraces the forward one
        x = emb.weight.data[ids]
        h = np.zeros(4)
        fwd = []
        for t in range(3):
            h = gru_oracle(enc.fwd0, x[t], h).astype(float)
            fwd.append(h)
        for t in range(3):
            expected = np.concatenate([fwd[t], fwd[2 - t]]) @ enc.proj.weight.data + enc.proj.bias.data
            np.testing.assert_allclose(out.states.data[t], expected, atol=1e-13)

    def test_padding_does_not_change_states(self, rng):
        emb = Embedding(10, 3, rng)
        enc = UtteranceEncoder(3, 4, 2, True, 0.0, rng)
        ids = np.array([[5, 6, 0, 0], [5, 6, 7, 8]])
        out = enc(emb(ids), ids != 0)
        alone = encode_utterance([5, 6], emb, enc)
        np.testing.assert_allclose(out.states.data[0, :2], alone.states.data, atol=1e-14)
        np.testing.assert_allclose(out.final.data[0], alone.final.data, atol=1e-14)

    def test_empty(self, rng):
        with pytest.raises(ValidationError):
            encode_utterance([], Embedding(10, 3, rng), UtteranceEncoder(3, 4, 1, True, 0.0, rng))

    def test_no_layers(self, rng):
        with pytest.raises(ConfigError):
            UtteranceEncoder(3, 4, 0, True, 0.0, rng)


class TestContextEncoder:
    def test_single_step(self, rng):
        enc = ContextEncoder(3, 4, rng)
        u = rng.normal(size=(1, 3))
        out = encode_context(T(u), enc)
        np.testing.assert_array_equal(out.final.data, gru_step(T(u[0]), T(np.zeros(4)), enc.gru0).data)

    def test_chain_of_steps_exact(self, rng):
        enc = ContextEncoder(3, 4, rng)
        u = rng.normal(size=(3, 3))
        out = encode_context(T(u), enc)
        h = T(np.zeros(4))
        for j in range(3):
            h = gru_step(T(u[j]), h, enc.gru0)
            np.testing.assert_array_equal(out.states.data[j], h.data)

    def test_default_width(self, rng):
        assert encode_context(T(rng.normal(size=(3, 512))), ContextEncoder(512, 512, rng)).states.shape == (3, 512)


class TestSelfAttentionEncoder:
    def test_single_utterance(self, rng):
        out = encode_context_selfattn(T(rng.normal(size=(1, 8))), SelfAttentionEncoder(8, 2, 3, rng))
        assert out.shape == (1, 8) and np.isfinite(out.data).all()

    def test_single_block_matches_attention_module(self, rng):
        enc = SelfAttentionEncoder(4, 2, 1, rng)
        x = rng.normal(size=(2, 4))
        direct = enc.block0(T(x[None]), None, add_positions=True).data[0]
        np.testing.assert_array_equal(encode_context_selfattn(T(x), enc).data, direct)

    def test_divisibility(self, rng):
        with pytest.raises(ConfigError):
            SelfAttentionEncoder(6, 4, 1, rng)


def test_end_to_end_encode_grad_check(rng):
    emb = Embedding(10, 3, rng)
    utt = UtteranceEncoder(3, 4, 2, True, 0.0, rng)
    ctx = ContextEncoder(4, 4, rng)
    ids = np.array([[5, 6, 7], [8, 9, 0]])
    w = T(rng.normal(size=(2, 4)))

    def loss():
        out = utt(emb(ids), ids != 0)
        states = ctx(ops.reshape(out.final, (1, 2, 4))).states
        return ops.sum(ops.mul(ops.tanh(ops.reshape(states, (2, 4))), w))

    params = {f"emb.{n}": p for n, p in emb.named_parameters()}
    params.update({f"utt.{n}": p for n, p in utt.named_parameters()})
    params.update({f"ctx.{n}": p for n, p in ctx.named_parameters()})
    report = grad_check_params(loss, params, 1e-5)
    assert max(report.values()) < 1e-4, report
