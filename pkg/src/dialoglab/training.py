"""Adam with decoupled weight decay, global-norm clipping, a plateau learning
rate schedule, linear KL warm-up and the epoch loop that ties them together."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from dialoglab.corpus import PAD, EncodedDialog, Vocabulary, make_batch
from dialoglab.errors import ConfigError, ValidationError
from dialoglab.models import DialogModel
from dialoglab.models.checkpoint import load_state_dict, save_checkpoint, state_dict
from dialoglab.numerics import no_grad, stream
from dialoglab.numerics.optim import Adam, AdamState, clip_gradients, grad_norm, optimizer_step

IMPROVEMENT = 1e-6


@dataclass
class TrainConfig:
    lr: float = 1e-4
    lr_decay: float = 0.5
    patience: int = 10
    clip_norm: float = 3.0
    weight_decay: float = 1e-6
    epochs: int = 100
    seed: int = 30
    batch_size: int = 16
    kl_anneal_steps: int = 5000
    early_stop_patience: int = 20

    def __post_init__(self):
        if not 0.0 < self.lr_decay < 1.0:
            raise ConfigError(f"lr_decay must be in (0, 1), got {self.lr_decay}")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.kl_anneal_steps < 1:
            raise ConfigError("kl_anneal_steps must be >= 1")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {', '.join(sorted(unknown))}")
        return cls(**data)


# schedules -----------------------------------------------------------------------------


class PlateauScheduler:
    """Halve (by ``decay``) once ``patience`` consecutive epochs fail to beat the best
    validation loss by at least ``IMPROVEMENT``; the bad-epoch counter then resets."""

    def __init__(self, lr: float, decay: float = 0.5, patience: int = 10, threshold: float = IMPROVEMENT):
        self.lr = lr
        self.decay = decay
        self.patience = patience
        self.threshold = threshold
        self.best = np.inf
        self.bad = 0

    def step(self, value: float) -> float:
        if value < self.best - self.threshold:
            self.best = value
            self.bad = 0
        else:
            self.bad += 1
            if self.bad >= self.patience:
                self.lr *= self.decay
                self.bad = 0
        return self.lr


def plateau_schedule(history: Sequence[float], lr: float, decay: float = 0.5, patience: int = 10) -> float:
    """Learning rate to use after the last epoch of ``history``, given the rate ``lr``
    in force during it.  Replays the whole history so it can be called statelessly."""
    if len(history) == 0:
        raise ValidationError("plateau schedule needs at least one validation loss")
    sched = PlateauScheduler(lr, decay, patience)
    decayed_last = False
    for value in history:
        before = sched.lr
        sched.step(float(value))
        decayed_last = sched.lr != before
    return lr * decay if decayed_last else lr


def kl_weight(step: int, anneal_steps: int) -> float:
    if anneal_steps < 1:
        raise ConfigError("anneal_steps must be >= 1")
    return min(1.0, max(0, step) / anneal_steps)


# logs ------------------------------------------------------------------------------------

LOG_COLUMNS = ("epoch", "train_loss", "valid_loss", "lr", "kl_weight")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_loss: float
    lr: float
    kl_weight: float
    seconds: float = 0.0


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_valid: float = float("inf")
    stopped_early: bool = False
    checkpoint: str | None = None

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.records]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.records:
            w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in LOG_COLUMNS[1:]])
        return buf.getvalue()

    def to_dict(self, timings: bool = True) -> dict:
        rows = []
        for r in self.records:
            row = asdict(r)
            if not timings:
                row.pop("seconds")
            rows.append(row)
        return {
            "epochs": rows,
            "best_epoch": self.best_epoch,
            "best_valid": self.best_valid,
            "stopped_early": self.stopped_early,
        }

    def to_json(self, timings: bool = True) -> str:
        return json.dumps(self.to_dict(timings), indent=2, sort_keys=True)

    def same_trajectory(self, other: TrainLog) -> bool:
        """Equality ignoring wall-clock times."""
        return self.to_dict(timings=False) == other.to_dict(timings=False)


# loop ---------------------------------------------------------------------------------


def batches(dialogs: Sequence[EncodedDialog], size: int, rng: np.random.Generator | None):
    order = np.arange(len(dialogs)) if rng is None else rng.permutation(len(dialogs))
    for start in range(0, len(order), size):
        yield make_batch([dialogs[i] for i in order[start : start + size]])


def evaluate_loss(model: DialogModel, dialogs: Sequence[EncodedDialog], batch_size: int = 16) -> float:
    """Token-weighted mean validation loss in evaluation mode (KL at full weight)."""
    was = model.training
    model.eval()
    total, tokens = 0.0, 0
    try:
        with no_grad():
            for batch in batches(dialogs, batch_size, None):
                n = int((batch.dec_out != PAD).sum())
                total += model.loss(batch, None, 1.0).item() * n
                tokens += n
    finally:
        model.train(was)
    return total / tokens


def token_accuracy(model: DialogModel, dialogs: Sequence[EncodedDialog], batch_size: int = 16) -> float:
    """Teacher-forced next-token accuracy over non-PAD targets (argmax, evaluation mode)."""
    was = model.training
    model.eval()
    hits, tokens = 0, 0
    try:
        with no_grad():
            for batch in batches(dialogs, batch_size, None):
                pred = model.forward(batch).logits.data.argmax(axis=-1)
                valid = batch.dec_out != PAD
                hits += int(((pred == batch.dec_out) & valid).sum())
                tokens += int(valid.sum())
    finally:
        model.train(was)
    return hits / tokens


def checkpoint_path(run_dir, architecture: str) -> Path:
    return Path(run_dir) / architecture / "best.ckpt"


def train(
    model: DialogModel,
    train_set: Sequence[EncodedDialog],
    valid_set: Sequence[EncodedDialog],
    config: TrainConfig | None = None,
    vocab: Vocabulary | None = None,
    run_dir=None,
    stop_when: Callable[[DialogModel, EpochRecord], bool] | None = None,
    restore_best: bool = True,
) -> TrainLog:
    """Epoch loop: seeded shuffling, teacher forcing, clipping, Adam, plateau decay
    and early stopping on validation loss.

    The best-validation parameters are kept in memory (and written to
    ``<run_dir>/<arch>/best.ckpt`` when ``run_dir`` and ``vocab`` are given) and
    restored at the end unless ``restore_best`` is false.  ``stop_when`` is
    consulted after every epoch and ends training early when it returns true.
    """
    config = config or TrainConfig()
    if len(train_set) == 0 or len(valid_set) == 0:
        raise ValidationError("training needs non-empty train and validation splits")
    shuffle_rng = stream(config.seed, "shuffle")
    dropout_rng = stream(config.seed, "dropout")
    params = model.parameters()
    opt = Adam(params, config.lr, config.weight_decay)
    sched = PlateauScheduler(config.lr, config.lr_decay, config.patience)
    variational = model.config.family == "vhred"
    log = TrainLog()
    best_state = None
    since_best = 0
    step = 0
    ckpt = checkpoint_path(run_dir, model.architecture) if run_dir is not None and vocab is not None else None
    model.train()
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        lr = opt.lr
        total, tokens = 0.0, 0
        for batch in batches(train_set, config.batch_size, shuffle_rng):
            weight = kl_weight(step, config.kl_anneal_steps) if variational else 0.0
            opt.zero_grad()
            loss = model.loss(batch, dropout_rng, weight)
            loss.backward()
            clip_gradients(params, config.clip_norm)
            opt.step()
            step += 1
            n = int((batch.dec_out != PAD).sum())
            total += loss.item() * n
            tokens += n
        valid = evaluate_loss(model, valid_set, config.batch_size)
        record = EpochRecord(
            epoch,
            total / tokens,
            valid,
            lr,
            kl_weight(step, config.kl_anneal_steps) if variational else 0.0,
            time.perf_counter() - start,
        )
        log.records.append(record)
        if valid < log.best_valid - IMPROVEMENT:
            log.best_valid = valid
            log.best_epoch = epoch
            best_state = state_dict(model)
            since_best = 0
            if ckpt is not None:
                save_checkpoint(ckpt, model, vocab, {"epoch": epoch, "valid_loss": valid})
                log.checkpoint = str(ckpt)
        else:
            since_best += 1
        opt.lr = sched.step(valid)
        if stop_when is not None and stop_when(model, record):
            break
        if since_best >= config.early_stop_patience:
            log.stopped_early = True
            break
    if restore_best and best_state is not None:
        load_state_dict(model, best_state)
    model.eval()
    return log
