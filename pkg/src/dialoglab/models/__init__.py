"""The twelve dialog architectures, greedy decoding and checkpoints."""

from dialoglab.models.base import (
    DecodeTrace,
    DialogModel,
    ForwardOutput,
    StepAttention,
    build_model,
    forward,
    generate,
    kl_standard_normal,
    sequence_loss,
    strip_word_attention,
)
from dialoglab.models.checkpoint import load_checkpoint, load_state_dict, save_checkpoint, state_dict
from dialoglab.models.config import ARCHITECTURES, BASE_OF, ModelConfig, check_architecture, display_name

__all__ = [
    "ARCHITECTURES",
    "BASE_OF",
    "DecodeTrace",
    "DialogModel",
    "ForwardOutput",
    "ModelConfig",
    "StepAttention",
    "build_model",
    "check_architecture",
    "display_name",
    "forward",
    "generate",
    "kl_standard_normal",
    "load_checkpoint",
    "load_state_dict",
    "save_checkpoint",
    "sequence_loss",
    "state_dict",
    "strip_word_attention",
]
