"""GRU cell, stacked bidirectional utterance encoder, recurrent and
self-attention context encoders.

Hidden states start at zero.  Bidirectional outputs are concatenated and
projected back to the hidden width so everything downstream sees one width.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dialoglab.attention import MultiHeadSelfAttention, sinusoidal_positions
from dialoglab.errors import ConfigError, DimensionError, ValidationError
from dialoglab.numerics import Embedding, Linear, Module, Tensor, ops
from dialoglab.numerics.module import uniform_param


@dataclass
class EncoderOutput:
    states: Tensor  # [..., L, d]
    final: Tensor  # [..., d]


class GRU(Module):
    """Gate weights are stored column-blocked as ``[reset | update | candidate]``."""

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        super().__init__()
        scale = 1.0 / np.sqrt(d_hidden)
        self.d_in = d_in
        self.d_hidden = d_hidden
        self.w_ih = uniform_param(rng, (d_in, 3 * d_hidden), scale)
        self.w_hh = uniform_param(rng, (d_hidden, 3 * d_hidden), scale)
        self.b_ih = uniform_param(rng, (3 * d_hidden,), scale)
        self.b_hh = uniform_param(rng, (3 * d_hidden,), scale)

    def __call__(self, x: Tensor, h: Tensor, mask=None) -> Tensor:
        return ops.gru_cell(x, h, self.w_ih, self.w_hh, self.b_ih, self.b_hh, mask)

    def sweep(self, inputs: Tensor, mask=None, reverse: bool = False, h0: Tensor | None = None):
        """Run over ``inputs`` [B, L, d_in]; returns (states [B, L, H], final [B, H]).

        Masked steps carry the previous state, so right padding is harmless in
        either direction.
        """
        b, ln, _ = inputs.shape
        h = Tensor(np.zeros((b, self.d_hidden))) if h0 is None else h0
        mask = np.ones((b, ln)) if mask is None else np.asarray(mask, dtype=float)
        out = [None] * ln
        steps = range(ln - 1, -1, -1) if reverse else range(ln)
        for t in steps:
            h = self(ops.index(inputs, (slice(None), t)), h, mask[:, t])
            out[t] = h
        return ops.stack(out, axis=1), h


def gru_step(x: Tensor, h: Tensor, params: GRU) -> Tensor:
    """Single-example GRU step: ``x`` [d_in], ``h`` [d_h] -> [d_h]."""
    if x.shape != (params.d_in,) or h.shape != (params.d_hidden,):
        raise DimensionError(
            f"gru_step expects x ({params.d_in},) and h ({params.d_hidden},), got {x.shape} and {h.shape}"
        )
    out = params(ops.reshape(x, (1, params.d_in)), ops.reshape(h, (1, params.d_hidden)))
    return ops.reshape(out, (params.d_hidden,))


class UtteranceEncoder(Module):
    """Stacked (optionally bidirectional) GRU over embedded tokens."""

    def __init__(self, d_embed: int, d_hidden: int, layers: int, bidirectional: bool, dropout: float, rng):
        super().__init__()
        if layers < 1:
            raise ConfigError("utterance encoder needs at least one layer")
        self.layers = layers
        self.bidirectional = bidirectional
        self.dropout = dropout
        self.d_hidden = d_hidden
        width = 2 * d_hidden if bidirectional else d_hidden
        for i in range(layers):
            d_in = d_embed if i == 0 else width
            setattr(self, f"fwd{i}", GRU(d_in, d_hidden, rng))
            if bidirectional:
                setattr(self, f"bwd{i}", GRU(d_in, d_hidden, rng))
        if bidirectional:
            self.proj = Linear(2 * d_hidden, d_hidden, rng)

    def __call__(self, embedded: Tensor, mask, rng=None) -> EncoderOutput:
        """``embedded`` [N, L, E], ``mask`` [N, L] -> states [N, L, H], final [N, H]."""
        x = embedded
        for i in range(self.layers):
            if i:
                x = ops.dropout(x, self.dropout, rng, self.training and rng is not None)
            fs, ff = getattr(self, f"fwd{i}").sweep(x, mask)
            if not self.bidirectional:
                x, final = fs, ff
                continue
            bs, bf = getattr(self, f"bwd{i}").sweep(x, mask, reverse=True)
            x = ops.concat([fs, bs], axis=-1)
            final = ops.concat([ff, bf], axis=-1)
        if self.bidirectional:
            return EncoderOutput(self.proj(x), self.proj(final))
        return EncoderOutput(x, final)


def encode_utterance(tokens, embeddings: Embedding, params: UtteranceEncoder) -> EncoderOutput:
    """Single utterance of token ids -> states [L, H], final [H] (evaluation mode)."""
    ids = np.asarray(tokens, dtype=np.int64).reshape(1, -1)
    if ids.size == 0:
        raise ValidationError("cannot encode an empty utterance")
    out = params(embeddings(ids), np.ones(ids.shape))
    return EncoderOutput(ops.reshape(out.states, out.states.shape[1:]), ops.reshape(out.final, (params.d_hidden,)))


class ContextEncoder(Module):
    """Unidirectional GRU over utterance vectors in chronological order."""

    def __init__(self, d_in: int, d_hidden: int, rng, layers: int = 1):
        super().__init__()
        self.layers = layers
        for i in range(layers):
            setattr(self, f"gru{i}", GRU(d_in if i == 0 else d_hidden, d_hidden, rng))

    def sweep(self, inputs: Tensor, mask=None) -> Tensor:
        x = inputs
        for i in range(self.layers):
            x, _ = getattr(self, f"gru{i}").sweep(x, mask)
        return x

    def __call__(self, inputs: Tensor, mask=None) -> EncoderOutput:
        x = inputs
        final = None
        for i in range(self.layers):
            x, final = getattr(self, f"gru{i}").sweep(x, mask)
        return EncoderOutput(x, final)


def encode_context(utterance_reprs: Tensor, params: ContextEncoder) -> EncoderOutput:
    """Single dialog: [m, d] utterance vectors -> states [m, H], final [H]."""
    m, d = utterance_reprs.shape
    if m == 0:
        raise ValidationError("context encoder needs at least one utterance")
    out = params(ops.reshape(utterance_reprs, (1, m, d)))
    h = out.final.shape[1]
    return EncoderOutput(ops.reshape(out.states, (m, h)), ops.reshape(out.final, (h,)))


class SelfAttentionEncoder(Module):
    """Stack of multi-head self-attention blocks; positions added once at the input."""

    def __init__(self, d_model: int, heads: int, layers: int, rng):
        super().__init__()
        if heads < 1 or d_model % heads:
            raise ConfigError(f"d_model={d_model} is not divisible by heads={heads}")
        self.d_model = d_model
        self.heads = heads
        self.layers = layers
        for i in range(layers):
            setattr(self, f"block{i}", MultiHeadSelfAttention(d_model, heads, rng))

    def __call__(self, x: Tensor, mask=None) -> Tensor:
        b, n, d = x.shape
        x = ops.add(x, sinusoidal_positions(n, d))
        for i in range(self.layers):
            x = getattr(self, f"block{i}")(x, mask, add_positions=False)
        return x


def encode_context_selfattn(utterance_reprs: Tensor, params: SelfAttentionEncoder) -> Tensor:
    """Single dialog: [m, d_model] -> [m, d_model]."""
    m, d = utterance_reprs.shape
    return ops.reshape(params(ops.reshape(utterance_reprs, (1, m, d))), (m, d))
