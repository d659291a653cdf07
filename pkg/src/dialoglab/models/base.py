"""Encoder-decoder dialog models sharing one GRU decoder.

At step ``i`` the decoder reads ``[embed(t_i); c_i]`` (plus the latent sample
for VHRED), where ``c_i`` is produced by the architecture-specific
:meth:`DialogModel.context_vector` with the top decoder state ``s_i`` as the
query.  Logits come from a linear layer on ``s_{i+1}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import SimpleNamespace
from typing import Sequence

import numpy as np

from dialoglab.attention import (
    AdditiveAttention,
    DynamicStaticFusion,
    cosine_relevance,
    hierarchical_attention,
)
from dialoglab.corpus import EOS, PAD, SOS, Batch, EncodedDialog, make_batch
from dialoglab.encoders import GRU, ContextEncoder, SelfAttentionEncoder, UtteranceEncoder
from dialoglab.errors import ConfigError, ValidationError
from dialoglab.models.config import ModelConfig
from dialoglab.numerics import Embedding, Linear, Module, Tensor, no_grad, ops, stream


@dataclass
class StepAttention:
    """Attention distributions used to produce one output token."""

    word_weights: list[np.ndarray] | None = None
    utterance_weights: np.ndarray | None = None
    extra: dict[str, np.ndarray] = field(default_factory=dict)

    def vectors(self) -> list[np.ndarray]:
        out = list(self.word_weights or [])
        if self.utterance_weights is not None:
            out.append(self.utterance_weights)
        out.extend(self.extra.values())
        return out


@dataclass
class DecodeTrace:
    tokens: list[int]
    steps: list[StepAttention]
    log_probs: list[float]

    def __len__(self):
        return len(self.tokens)


@dataclass
class ForwardOutput:
    logits: Tensor  # [B, R, V]
    kl: Tensor | None
    attention: list[dict] | None = None


def kl_standard_normal(mu: Tensor, logvar: Tensor) -> Tensor:
    """Batch-mean ``KL(N(mu, exp(logvar)) || N(0, I))``."""
    per = ops.sub(ops.add(ops.mul(mu, mu), ops.exp(logvar)), ops.add(logvar, 1.0))
    return ops.mul(ops.sum(per), 0.5 / mu.shape[0])


def sequence_loss(logits: Tensor, targets, pad_id: int = PAD, kl_term: Tensor | None = None, kl_weight: float = 0.0):
    """Mean token cross-entropy over non-PAD targets plus ``kl_weight * kl_term``."""
    targets = np.asarray(targets)
    if not (targets != pad_id).any():
        raise ValidationError("every target position is padding")
    loss = ops.cross_entropy(ops.reshape(logits, (-1, logits.shape[-1])), targets.reshape(-1), ignore_index=pad_id)
    if kl_term is not None and kl_weight != 0.0:
        loss = ops.add(loss, ops.mul(kl_term, kl_weight))
    return loss


class DialogModel(Module):
    hierarchical = True

    def __init__(self, config: ModelConfig, seed: int = 30):
        super().__init__()
        object.__setattr__(self, "config", config)
        object.__setattr__(self, "seed", int(seed))
        object.__setattr__(self, "word_attention", bool(config.word_attention))
        c = config
        rng = stream(seed, "init")
        self.embedding = Embedding(c.vocab_size, c.embed, rng)
        self.utterance_encoder = UtteranceEncoder(c.embed, c.hidden, c.utterance_layers, c.bidirectional, c.dropout, rng)
        self.build(rng)
        dec_in = c.embed + c.hidden + self.extra_input_dim
        for layer in range(c.decoder_layers):
            setattr(self, f"decoder{layer}", GRU(dec_in if layer == 0 else c.hidden, c.hidden, rng))
            setattr(self, f"init{layer}", Linear(c.hidden + self.extra_input_dim, c.hidden, rng))
        self.output = Linear(c.hidden, c.vocab_size, rng)

    # family hooks ----------------------------------------------------------------------

    extra_input_dim = 0

    def build(self, rng):
        raise NotImplementedError

    def encode(self, batch: Batch, rng) -> SimpleNamespace:
        raise NotImplementedError

    def context_vector(self, query: Tensor, enc: SimpleNamespace):
        raise NotImplementedError

    # shared machinery ----------------------------------------------------------------------

    @property
    def architecture(self) -> str:
        return self.config.architecture

    def _drop(self, x: Tensor, rng) -> Tensor:
        return ops.dropout(x, self.config.dropout, rng, self.training and rng is not None)

    def init_states(self, enc) -> list[Tensor]:
        return [ops.tanh(getattr(self, f"init{i}")(enc.init_source)) for i in range(self.config.decoder_layers)]

    def decoder_step(self, x: Tensor, states: list[Tensor], rng) -> list[Tensor]:
        new = []
        for layer, h in enumerate(states):
            if layer:
                x = self._drop(x, rng)
            x = getattr(self, f"decoder{layer}")(x, h)
            new.append(x)
        return new

    def forward(self, batch: Batch, rng=None, record: bool = False) -> ForwardOutput:
        """Teacher-forced pass over ``batch.dec_in``; logits for ``batch.dec_out``."""
        enc = self.encode(batch, rng)
        states = self.init_states(enc)
        emb = self._drop(self.embedding(batch.dec_in), rng)
        tops, records = [], []
        for i in range(batch.dec_in.shape[1]):
            ctx, rec = self.context_vector(states[-1], enc)
            if record:
                records.append(rec)
            x = ops.concat([ops.index(emb, (slice(None), i)), ctx] + enc.extra_inputs, axis=-1)
            states = self.decoder_step(x, states, rng)
            tops.append(states[-1])
        logits = self.output(ops.stack(tops, axis=1))
        return ForwardOutput(logits, enc.kl, records if record else None)

    def loss(self, batch: Batch, rng=None, kl_weight: float = 1.0) -> Tensor:
        out = self.forward(batch, rng)
        return sequence_loss(out.logits, batch.dec_out, PAD, out.kl, kl_weight)

    def generate_batch(self, dialogs: Sequence[EncodedDialog], max_len: int | None = None) -> list[DecodeTrace]:
        """Greedy decoding from SOS until EOS or ``max_len``; ties go to the lowest id."""
        max_len = self.config.max_decode_len if max_len is None else max_len
        if max_len < 1:
            raise ConfigError("max_len must be >= 1")
        queries = [EncodedDialog(d.context, (), d.source) for d in dialogs]
        batch = make_batch(queries)
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                enc = self.encode(batch, None)
                states = self.init_states(enc)
                b = batch.size
                token = np.full(b, SOS, dtype=np.int64)
                done = np.zeros(b, dtype=bool)
                traces = [DecodeTrace([], [], []) for _ in range(b)]
                for _ in range(max_len):
                    ctx, rec = self.context_vector(states[-1], enc)
                    x = ops.concat([self.embedding(token), ctx] + enc.extra_inputs, axis=-1)
                    states = self.decoder_step(x, states, None)
                    logp = ops.log_softmax(self.output(states[-1])).data
                    token = logp.argmax(axis=1)
                    for row in range(b):
                        if done[row]:
                            continue
                        traces[row].tokens.append(int(token[row]))
                        traces[row].log_probs.append(float(logp[row, token[row]]))
                        traces[row].steps.append(self.row_attention(rec, row, batch))
                    done |= token == EOS
                    if done.all():
                        break
        finally:
            self.train(was_training)
        return traces

    def generate(self, dialog: EncodedDialog, max_len: int | None = None) -> DecodeTrace:
        return self.generate_batch([dialog], max_len)[0]

    def row_attention(self, rec: dict, row: int, batch: Batch) -> StepAttention:
        if not self.hierarchical:
            n = int(batch.flat_mask[row].sum())
            return StepAttention(word_weights=[rec["word"][row, :n].copy()])
        m = int(batch.n_utts[row])
        word = None
        if "word" in rec:
            lengths = batch.ctx_mask[row].sum(axis=1)
            word = [rec["word"][row, j, : lengths[j]].copy() for j in range(m)]
        extra = {k: rec[k][row, :m].copy() for k in ("static", "wseq") if k in rec}
        return StepAttention(word, rec["utt"][row, :m].copy(), extra)


class Seq2SeqModel(DialogModel):
    """Flattened context, bidirectional GRU encoder, additive attention.

    The ``seq2seq_trs`` variant passes encoder token states through a
    self-attention stack before attention."""

    hierarchical = False

    def build(self, rng):
        c = self.config
        self.attn = AdditiveAttention(c.hidden, c.hidden, c.attn_dim, rng)
        if c.family == "seq2seq_trs":
            self.self_attention = SelfAttentionEncoder(c.d_model, c.heads, c.transformer_layers, rng)

    def encode(self, batch, rng):
        emb = self._drop(self.embedding(batch.flat), rng)
        out = self.utterance_encoder(emb, batch.flat_mask, rng)
        states = out.states
        if self.config.family == "seq2seq_trs":
            states = self.self_attention(states, batch.flat_mask)
        return SimpleNamespace(
            states=states,
            key_proj=self.attn.project_keys(states),
            mask=batch.flat_mask,
            init_source=out.final,
            extra_inputs=[],
            kl=None,
        )

    def context_vector(self, query, enc):
        ctx, w = self.attn(query, enc.states, enc.key_proj, enc.mask)
        return ctx, {"word": w.data}


class HierarchicalModel(DialogModel):
    """HRED with utterance-level attention; with word-level attention this is HRAN (= HRED+WA)."""

    def build(self, rng):
        c = self.config
        self.build_context(rng)
        self.build_utterance_attention(rng)
        if c.word_attention:
            self.attn_word = AdditiveAttention(c.hidden, c.hidden, c.attn_dim, rng)

    def build_context(self, rng):
        self.context_encoder = ContextEncoder(self.config.hidden, self.config.hidden, rng, self.config.context_layers)

    def build_utterance_attention(self, rng):
        self.attn_utt = AdditiveAttention(self.config.hidden, self.config.hidden, self.config.attn_dim, rng)

    def context_sweep(self, x: Tensor, mask) -> Tensor:
        return self.context_encoder.sweep(x, mask)

    def utterance_scale(self, reprs: Tensor, batch: Batch) -> Tensor | None:
        return None

    def encode_words(self, batch: Batch, rng):
        b, m, ln = batch.ctx.shape
        ids = batch.ctx.reshape(b * m, ln)
        emb = self._drop(self.embedding(ids), rng)
        out = self.utterance_encoder(emb, batch.ctx_mask.reshape(b * m, ln), rng)
        h = self.config.hidden
        return ops.reshape(out.states, (b, m, ln, h)), ops.reshape(out.final, (b, m, h))

    def last_valid(self, x: Tensor, batch: Batch) -> Tensor:
        return ops.index(x, (np.arange(batch.size), batch.n_utts - 1))

    def encode(self, batch, rng):
        word_states, reprs = self.encode_words(batch, rng)
        scale = self.utterance_scale(reprs, batch)
        inputs = reprs if scale is None else ops.mul(reprs, ops.reshape(scale, scale.shape + (1,)))
        states = self.context_sweep(inputs, batch.utt_mask)
        enc = SimpleNamespace(
            batch=batch,
            reprs=reprs,
            scale=scale,
            states=states,
            init_source=self.last_valid(states, batch),
            extra_inputs=[],
            kl=None,
        )
        self.prepare_utterance_attention(enc)
        if self.word_attention:
            enc.word_states = word_states
            enc.word_key_proj = self.attn_word.project_keys(word_states)
        return enc

    def prepare_utterance_attention(self, enc):
        enc.key_proj = self.attn_utt.project_keys(enc.states)

    def utterance_context(self, query, states, key_proj, enc, static: bool):
        if key_proj is None:
            key_proj = self.attn_utt.project_keys(states)
        ctx, w = self.attn_utt(query, states, key_proj, enc.batch.utt_mask)
        return ctx, {"utt": w.data}

    def context_vector(self, query, enc):
        if not self.word_attention:
            ctx, rec = self.utterance_context(query, enc.states, enc.key_proj, enc, static=True)
        else:
            batch = enc.batch
            c_words, w_words = self.attn_word.grouped(query, enc.word_states, enc.word_key_proj, batch.ctx_mask)
            if enc.scale is not None:
                c_words = ops.mul(c_words, ops.reshape(enc.scale, enc.scale.shape + (1,)))
            states = self.context_sweep(c_words, batch.utt_mask)
            ctx, rec = self.utterance_context(query, states, None, enc, static=False)
            rec["word"] = w_words.data
        if enc.scale is not None:
            rec["wseq"] = enc.scale.data
        return ctx, rec


class WSeqModel(HierarchicalModel):
    """Utterance vectors rescaled by cosine relevance to the query before the context sweep."""

    def utterance_scale(self, reprs, batch):
        return cosine_relevance(reprs, batch.utt_mask, batch.n_utts)


class VHREDModel(HierarchicalModel):
    """HRED plus a Gaussian latent drawn before decoding; prior N(0, I).

    Training samples ``z = mu + sigma * eps`` from the posterior conditioned on
    the context summary and the encoded response; evaluation with a response
    uses the posterior mean; generation (no response) uses the prior mean.
    """

    @property
    def extra_input_dim(self):
        return self.config.latent_dim

    def build(self, rng):
        super().build(rng)
        self.posterior = Linear(2 * self.config.hidden, 2 * self.config.latent_dim, rng)

    def encode(self, batch, rng):
        enc = super().encode(batch, rng)
        b = batch.size
        k = self.config.latent_dim
        if batch.resp_mask.any(axis=1).all():
            emb = self._drop(self.embedding(batch.resp), rng)
            resp = self.utterance_encoder(emb, batch.resp_mask, rng).final
            stats = self.posterior(ops.concat([enc.init_source, resp], axis=-1))
            mu = ops.index(stats, (slice(None), slice(0, k)))
            logvar = ops.index(stats, (slice(None), slice(k, 2 * k)))
            if self.training and rng is not None:
                eps = rng.standard_normal((b, k))
                z = ops.add(mu, ops.mul(ops.exp(ops.mul(logvar, 0.5)), eps))
            else:
                z = mu
            enc.kl = kl_standard_normal(mu, logvar)
            enc.latent = (mu, logvar)
        else:
            z = Tensor(np.zeros((b, k)))
        enc.z = z
        enc.extra_inputs = [z]
        enc.init_source = ops.concat([enc.init_source, z], axis=-1)
        return enc


class DSHREDModel(HierarchicalModel):
    """Dynamic (decoder-state) and static (last-utterance) attention over context states."""

    def build_utterance_attention(self, rng):
        c = self.config
        self.fusion = DynamicStaticFusion(c.hidden, c.hidden, c.attn_dim, rng)

    def prepare_utterance_attention(self, enc):
        enc.last_repr = self.last_valid(enc.reprs, enc.batch)
        enc.key_proj = self.fusion.dynamic.project_keys(enc.states)
        enc.static_ctx, enc.static_w = self.fusion.static_context(enc.last_repr, enc.states, enc.batch.utt_mask)

    def utterance_context(self, query, states, key_proj, enc, static):
        mask = enc.batch.utt_mask
        if static:
            static_ctx, static_w = enc.static_ctx, enc.static_w
        else:
            static_ctx, static_w = self.fusion.static_context(enc.last_repr, states, mask)
            key_proj = self.fusion.dynamic.project_keys(states)
        ctx, w = self.fusion(query, states, key_proj, mask, static_ctx)
        return ctx, {"utt": w.data, "static": static_w.data}


class ReCoSaModel(HierarchicalModel):
    """Self-attention context encoder, additive attention, GRU decoder."""

    def build_context(self, rng):
        c = self.config
        self.self_attention = SelfAttentionEncoder(c.d_model, c.heads, c.transformer_layers, rng)

    def context_sweep(self, x, mask):
        return self.self_attention(x, mask)


FAMILIES = {
    "seq2seq": Seq2SeqModel,
    "seq2seq_trs": Seq2SeqModel,
    "hred": HierarchicalModel,
    "wseq": WSeqModel,
    "vhred": VHREDModel,
    "dshred": DSHREDModel,
    "recosa": ReCoSaModel,
}


def build_model(config: ModelConfig, seed: int = 30) -> DialogModel:
    return FAMILIES[config.family](config, seed)


def strip_word_attention(model: DialogModel) -> DialogModel:
    """The base architecture of a +WA model, sharing every parameter except the
    word-level attention (copied, so the two models stay independent)."""
    from dialoglab.models.config import BASE_OF

    arch = model.architecture
    if arch not in BASE_OF:
        raise ConfigError(f"{arch} has no word-level attention to strip")
    config = ModelConfig.from_dict(dict(model.config.to_dict(), architecture=BASE_OF[arch], word_attention=None))
    base = build_model(config, model.seed)
    source = dict(model.named_parameters())
    for name, p in base.named_parameters():
        p.data = source[name].data.copy()
    base.train(model.training)
    return base


def forward(model: DialogModel, dialog: EncodedDialog, teacher_tokens: Sequence[int] | None = None) -> ForwardOutput:
    """Single-dialog teacher-forced pass; ``teacher_tokens`` defaults to the dialog's response."""
    if teacher_tokens is not None:
        dialog = EncodedDialog(dialog.context, tuple(teacher_tokens), dialog.source)
    return model.forward(make_batch([dialog]))


def generate(model: DialogModel, dialog: EncodedDialog, mode: str = "greedy", max_len: int | None = None):
    if mode != "greedy":
        raise ConfigError(f"unsupported decoding mode {mode!r}; only greedy is implemented")
    return model.generate(dialog, max_len)
