"""Model checkpoints: a single ``.npz`` holding named float64 parameters plus a
JSON header (format tag, version, model config, init seed, vocabulary)."""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

from dialoglab.corpus import Vocabulary
from dialoglab.errors import CheckpointError
from dialoglab.models.base import DialogModel, build_model
from dialoglab.models.config import ModelConfig

FORMAT = "dialoglab-checkpoint"
VERSION = 1


def state_dict(model: DialogModel) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in model.named_parameters()}


def load_state_dict(model: DialogModel, state: dict[str, np.ndarray], strict: bool = True) -> None:
    params = dict(model.named_parameters())
    missing = set(params) - set(state)
    if strict and missing:
        raise CheckpointError(f"missing parameters: {', '.join(sorted(missing))}")
    for name, p in params.items():
        if name not in state:
            continue
        value = np.asarray(state[name], dtype=np.float64)
        if value.shape != p.shape:
            raise CheckpointError(f"parameter {name}: shape {value.shape} != {p.shape}")
        p.data = value.copy()


def save_checkpoint(path, model: DialogModel, vocab: Vocabulary, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format": FORMAT,
        "version": VERSION,
        "config": model.config.to_dict(),
        "seed": model.seed,
        "vocab": vocab.to_list(),
        "extra": extra or {},
    }
    arrays = {f"param/{k}": v for k, v in state_dict(model).items()}
    buf = io.BytesIO()
    np.savez(buf, __header__=np.array(json.dumps(header, sort_keys=True)), **arrays)
    path.write_bytes(buf.getvalue())
    return path


def load_checkpoint(path):
    """Returns ``(model, vocab, header)``; the model is in evaluation mode."""
    try:
        with np.load(Path(path), allow_pickle=False) as data:
            header = json.loads(str(data["__header__"]))
            state = {k[len("param/") :]: data[k] for k in data.files if k.startswith("param/")}
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if header.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a dialoglab checkpoint")
    if header.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    config = ModelConfig.from_dict(header["config"])
    model = build_model(config, header["seed"])
    load_state_dict(model, state)
    model.eval()
    return model, Vocabulary(header["vocab"]), header
