"""Architecture registry and model hyperparameters."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from dialoglab.errors import ConfigError

# name -> (family, word-level attention, display name)
ARCHITECTURES: dict[str, tuple[str, bool, str]] = {
    "seq2seq_attn": ("seq2seq", False, "Seq2Seq+attn"),
    "seq2seq_trs": ("seq2seq_trs", False, "Seq2Seq+trs"),
    "hred": ("hred", False, "HRED"),
    "wseq": ("wseq", False, "WSeq"),
    "vhred": ("vhred", False, "VHRED"),
    "dshred": ("dshred", False, "DSHRED"),
    "recosa": ("recosa", False, "ReCoSa"),
    "hran": ("hred", True, "HRAN"),
    "hred_wa": ("hred", True, "HRED+WA"),
    "wseq_wa": ("wseq", True, "WSeq+WA"),
    "dshred_wa": ("dshred", True, "DSHRED+WA"),
    "recosa_wa": ("recosa", True, "ReCoSa+WA"),
}

# +WA variant -> the model it extends
BASE_OF = {"hred_wa": "hred", "wseq_wa": "wseq", "dshred_wa": "dshred", "recosa_wa": "recosa", "hran": "hred"}

SELF_ATTENTION_FAMILIES = ("seq2seq_trs", "recosa")


def display_name(arch: str) -> str:
    return ARCHITECTURES[arch][2]


def check_architecture(arch: str) -> str:
    if arch not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture {arch!r}; valid: {', '.join(ARCHITECTURES)}")
    return arch


@dataclass
class ModelConfig:
    """Defaults: GRU 512, embeddings 256, 2-layer bidirectional utterance
    encoder, 1-layer context encoder, 2-layer decoder, 8 heads x 3 layers at
    d_model 512, dropout 0.3."""

    architecture: str
    vocab_size: int
    word_attention: bool | None = None
    hidden: int = 512
    embed: int = 256
    utterance_layers: int = 2
    bidirectional: bool = True
    context_layers: int = 1
    decoder_layers: int = 2
    heads: int = 8
    d_model: int | None = None
    transformer_layers: int = 3
    dropout: float = 0.3
    latent_dim: int = 64
    max_decode_len: int = 30
    attn_dim: int | None = None

    def __post_init__(self):
        check_architecture(self.architecture)
        family, wa, _ = ARCHITECTURES[self.architecture]
        if self.word_attention is None:
            self.word_attention = wa
        elif self.word_attention != wa:
            if self.architecture == "vhred":
                raise ConfigError("VHRED cannot take word-level attention (latent variable before decoding)")
            raise ConfigError(
                f"{self.architecture} has word_attention={wa}; pick the matching architecture name instead"
            )
        if self.d_model is None:
            self.d_model = self.hidden
        if family in SELF_ATTENTION_FAMILIES and self.d_model != self.hidden:
            raise ConfigError(f"d_model ({self.d_model}) must equal hidden ({self.hidden}) for {self.architecture}")
        if family in SELF_ATTENTION_FAMILIES and self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.max_decode_len < 1:
            raise ConfigError("max_decode_len must be >= 1")
        if self.vocab_size <= 5:
            raise ConfigError("vocab_size must exceed the 5 reserved tokens")
        if self.attn_dim is None:
            self.attn_dim = self.hidden

    @property
    def family(self) -> str:
        return ARCHITECTURES[self.architecture][0]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {', '.join(sorted(unknown))}")
        return cls(**data)
