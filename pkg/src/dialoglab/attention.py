"""Attention mechanisms.

* additive (one-layer) attention: ``e_j = v . tanh(W_q s + W_k h_j)``,
  ``w = softmax(e)``, ``c = sum_j w_j h_j``
* word-level then utterance-level (hierarchical) attention
* cosine relevance weights over context utterances (WSeq)
* dynamic + static attention fusion (DSHRED)
* scaled dot-product multi-head self-attention with sinusoidal positions

Batched entry points take a leading batch axis and boolean masks for padding;
the single-example helpers (``additive_attend``, ``hierarchical_context``,
``wseq_weights``, ``dshred_context``, ``multi_head_self_attend``) wrap them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from dialoglab.errors import ConfigError, DimensionError, ValidationError
from dialoglab.numerics import LayerNorm, Linear, Module, Tensor, ops
from dialoglab.numerics.module import uniform_param


@dataclass
class AttentionOutput:
    weights: np.ndarray
    context: Tensor
    word_weights: list[np.ndarray] | None = field(default=None)


class AdditiveAttention(Module):
    def __init__(self, d_query: int, d_key: int, d_attn: int, rng: np.random.Generator):
        super().__init__()
        self.w_query = uniform_param(rng, (d_query, d_attn), 1.0 / np.sqrt(d_query))
        self.w_key = uniform_param(rng, (d_key, d_attn), 1.0 / np.sqrt(d_key))
        self.v = uniform_param(rng, (d_attn,), 1.0 / np.sqrt(d_attn))

    def project_keys(self, keys: Tensor) -> Tensor:
        """Key projections; computed once and reused across decoding steps."""
        return ops.matmul(keys, self.w_key)

    def __call__(self, query: Tensor, values: Tensor, key_proj: Tensor, mask=None):
        """``query`` [B, dq], ``values`` [B, K, dv], ``key_proj`` [B, K, da] -> (context [B, dv], weights [B, K])."""
        if values.shape[1] == 0:
            raise ValidationError("attention over zero keys")
        qp = ops.matmul(query, self.w_query)
        weights = ops.softmax(ops.additive_scores(qp, key_proj, self.v), axis=-1, mask=mask)
        b, k = weights.shape
        ctx = ops.matmul(ops.reshape(weights, (b, 1, k)), values)
        return ops.reshape(ctx, (b, values.shape[2])), weights

    def grouped(self, query: Tensor, values: Tensor, key_proj: Tensor, mask):
        """Attend separately inside each of M groups sharing one query per batch row.

        ``values`` [B, M, L, dv], ``key_proj`` [B, M, L, da], ``mask`` [B, M, L]
        -> (contexts [B, M, dv], weights [B, M, L]).
        """
        b, m, ln, dv = values.shape
        qp = ops.matmul(query, self.w_query)
        scores = ops.additive_scores(qp, ops.reshape(key_proj, (b, m * ln, key_proj.shape[3])), self.v)
        weights = ops.softmax(ops.reshape(scores, (b, m, ln)), axis=-1, mask=mask)
        ctx = ops.matmul(ops.reshape(weights, (b, m, 1, ln)), values)
        return ops.reshape(ctx, (b, m, dv)), weights


def additive_attend(query: Tensor, keys: Tensor, values: Tensor, params: AdditiveAttention) -> AttentionOutput:
    """Single-example additive attention: ``query`` [dq], ``keys`` [k, dk], ``values`` [k, dv]."""
    if keys.shape[0] == 0:
        raise ValidationError("attention over zero keys")
    if keys.shape[0] != values.shape[0]:
        raise DimensionError(f"{keys.shape[0]} keys but {values.shape[0]} values")
    k, dk = keys.shape
    kp = params.project_keys(ops.reshape(keys, (1, k, dk)))
    ctx, w = params(ops.reshape(query, (1, query.shape[0])), ops.reshape(values, (1, k, values.shape[1])), kp)
    return AttentionOutput(w.data[0].copy(), ops.reshape(ctx, (values.shape[1],)))


# -- hierarchical -----------------------------------------------------------------------


def hierarchical_attention(
    query: Tensor,
    word_states: Tensor,
    word_key_proj: Tensor,
    word_mask: np.ndarray,
    utt_mask: np.ndarray,
    word_attn: AdditiveAttention,
    utt_attn: AdditiveAttention,
    sweep: Callable[[Tensor, np.ndarray], Tensor],
    utterance_scale: Tensor | None = None,
):
    """Word-level attention per utterance, context sweep, utterance-level attention.

    Returns ``(c_i, word_weights [B,M,L], utterance_weights [B,M], H [B,M,d])``.
    ``utterance_scale`` [B, M] optionally rescales the per-utterance vectors
    before the sweep (used by the WSeq family).
    """
    c_words, w_words = word_attn.grouped(query, word_states, word_key_proj, word_mask)
    if utterance_scale is not None:
        c_words = ops.mul(c_words, ops.reshape(utterance_scale, utterance_scale.shape + (1,)))
    states = sweep(c_words, utt_mask)
    ctx, w_utt = utt_attn(query, states, utt_attn.project_keys(states), utt_mask)
    return ctx, w_words, w_utt, states


def hierarchical_context(
    decoder_state: Tensor,
    word_states: Sequence[Tensor],
    context_encoder,
    word_attn: AdditiveAttention,
    utt_attn: AdditiveAttention,
) -> AttentionOutput:
    """Single-example hierarchical context vector.

    ``word_states`` holds one [L_j, d] tensor per context utterance in
    chronological order; ``context_encoder.sweep`` runs the recurrent context
    encoder over [B, M, d] inputs.
    """
    m = len(word_states)
    if m == 0:
        raise ValidationError("hierarchical attention needs at least one utterance")
    d = word_states[0].shape[1]
    ln = max(w.shape[0] for w in word_states)
    padded = []
    mask = np.zeros((1, m, ln), dtype=bool)
    for j, w in enumerate(word_states):
        pad = ln - w.shape[0]
        padded.append(w if pad == 0 else ops.concat([w, Tensor(np.zeros((pad, d)))], axis=0))
        mask[0, j, : w.shape[0]] = True
    states = ops.reshape(ops.stack(padded, axis=0), (1, m, ln, d))
    ctx, w_words, w_utt, _ = hierarchical_attention(
        ops.reshape(decoder_state, (1, decoder_state.shape[0])),
        states,
        word_attn.project_keys(states),
        mask,
        np.ones((1, m), dtype=bool),
        word_attn,
        utt_attn,
        context_encoder.sweep,
    )
    word_weights = [w_words.data[0, j, : word_states[j].shape[0]].copy() for j in range(m)]
    return AttentionOutput(w_utt.data[0].copy(), ops.reshape(ctx, (ctx.shape[1],)), word_weights)


# -- WSeq ----------------------------------------------------------------------------------


def _safe_norm(x: Tensor) -> Tensor:
    sq = ops.sum(ops.mul(x, x), axis=-1)
    # zero vectors get norm 1 so their cosine (dot = 0) comes out as 0
    return ops.sqrt(ops.add(sq, (sq.data == 0.0).astype(float)))


def cosine_relevance(reprs: Tensor, utt_mask: np.ndarray, n_utts: np.ndarray) -> Tensor:
    """Batched WSeq weights over the context; the last valid utterance is the query.

    ``reprs`` [B, M, d] -> weights [B, M]: raw weight ``max(0, cos(query, u_j))``
    for earlier utterances, 1 for the query, 0 on padding, then sum-normalised.
    """
    b, m, _ = reprs.shape
    last = np.asarray(n_utts) - 1
    query = ops.index(reprs, (np.arange(b), last))  # [B, d]
    dots = ops.reshape(ops.matmul(reprs, ops.reshape(query, (b, query.shape[1], 1))), (b, m))
    norms = ops.mul(_safe_norm(reprs), ops.reshape(_safe_norm(query), (b, 1)))
    raw = ops.relu(ops.div(dots, norms))
    is_query = np.zeros((b, m))
    is_query[np.arange(b), last] = 1.0
    keep = np.asarray(utt_mask, dtype=float) * (1.0 - is_query)
    raw = ops.add(ops.mul(raw, keep), is_query)
    total = ops.sum(raw, axis=1, keepdims=True)
    return ops.div(raw, total)


def wseq_weights(query_repr: Tensor, utterance_reprs: Tensor) -> np.ndarray:
    """Relevance of ``m`` context utterances to the query, plus the query itself (last).

    Raw weights are the clamped cosines and 1 for the query; the result is
    sum-normalised, uniform if every raw weight vanishes.
    """
    q = np.asarray(query_repr.data if isinstance(query_repr, Tensor) else query_repr, dtype=float)
    u = np.asarray(utterance_reprs.data if isinstance(utterance_reprs, Tensor) else utterance_reprs, dtype=float)
    u = u.reshape(-1, q.shape[0])
    qn = np.linalg.norm(q)
    un = np.linalg.norm(u, axis=1)
    denom = un * qn
    cos = np.where(denom > 0, (u @ q) / np.where(denom > 0, denom, 1.0), 0.0)
    raw = np.append(np.maximum(cos, 0.0), 1.0)
    total = raw.sum()
    if total == 0.0:
        return np.full(raw.shape, 1.0 / raw.size)
    return raw / total


# -- DSHRED ---------------------------------------------------------------------------------


class DynamicStaticFusion(Module):
    """Dynamic (decoder-state query) and static (last-utterance query) attention fused by a projection."""

    def __init__(self, d_query: int, d: int, d_attn: int, rng: np.random.Generator):
        super().__init__()
        self.dynamic = AdditiveAttention(d_query, d, d_attn, rng)
        self.static = AdditiveAttention(d, d, d_attn, rng)
        self.fuse = Linear(2 * d, d, rng)

    def static_context(self, last_state: Tensor, states: Tensor, mask):
        return self.static(last_state, states, self.static.project_keys(states), mask)

    def __call__(self, query: Tensor, states: Tensor, key_proj: Tensor, mask, static_ctx: Tensor):
        dyn, w_dyn = self.dynamic(query, states, key_proj, mask)
        return self.fuse(ops.concat([dyn, static_ctx], axis=-1)), w_dyn


def dshred_context(
    decoder_state: Tensor, context_states: Tensor, last_utterance_state: Tensor, params: DynamicStaticFusion
):
    """Single example: returns ``(fused context [d], dynamic weights, static weights)``."""
    m, d = context_states.shape
    if m == 0:
        raise ValidationError("dynamic/static attention needs at least one context state")
    states = ops.reshape(context_states, (1, m, d))
    static_ctx, w_static = params.static_context(ops.reshape(last_utterance_state, (1, d)), states, None)
    out, w_dyn = params(
        ops.reshape(decoder_state, (1, decoder_state.shape[0])),
        states,
        params.dynamic.project_keys(states),
        None,
        static_ctx,
    )
    return ops.reshape(out, (d,)), w_dyn.data[0].copy(), w_static.data[0].copy()


# -- multi-head self-attention -----------------------------------------------------------------


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class MultiHeadSelfAttention(Module):
    """One block: positions (optional), per-head scaled dot-product attention,
    head concatenation, output projection, residual connection, layer norm."""

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if heads < 1 or d_model % heads:
            raise ConfigError(f"d_model={d_model} is not divisible by heads={heads}")
        self.d_model = d_model
        self.heads = heads
        self.q = Linear(d_model, d_model, rng, bias=False)
        self.k = Linear(d_model, d_model, rng, bias=False)
        self.v = Linear(d_model, d_model, rng, bias=False)
        self.out = Linear(d_model, d_model, rng)
        self.norm = LayerNorm(d_model)
        object.__setattr__(self, "last_weights", None)

    def _split(self, x: Tensor, b: int, n: int) -> Tensor:
        dk = self.d_model // self.heads
        return ops.transpose(ops.reshape(x, (b, n, self.heads, dk)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, mask=None, add_positions: bool = True) -> Tensor:
        """``x`` [B, n, d_model]; ``mask`` [B, n] marks real (non-pad) positions."""
        b, n, d = x.shape
        if d != self.d_model:
            raise DimensionError(f"expected width {self.d_model}, got {d}")
        if add_positions:
            x = ops.add(x, sinusoidal_positions(n, d))
        dk = d // self.heads
        q, k, v = (self._split(proj(x), b, n) for proj in (self.q, self.k, self.v))
        scores = ops.mul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dk))
        key_mask = None if mask is None else np.asarray(mask, dtype=bool)[:, None, None, :]
        weights = ops.softmax(scores, axis=-1, mask=key_mask)
        object.__setattr__(self, "last_weights", weights.data)
        heads = ops.reshape(ops.transpose(ops.matmul(weights, v), (0, 2, 1, 3)), (b, n, d))
        return self.norm(ops.add(x, self.out(heads)))


def multi_head_self_attend(x: Tensor, heads: int, params: MultiHeadSelfAttention) -> Tensor:
    """Single sequence ``x`` [n, d_model] -> [n, d_model]."""
    if params.heads != heads or x.shape[1] % heads:
        raise ConfigError(f"d_model={x.shape[1]} is not divisible by heads={heads}")
    n, d = x.shape
    return ops.reshape(params(ops.reshape(x, (1, n, d))), (n, d))
