import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dialoglab.corpus import build_vocab, encode_dialog
from dialoglab.errors import ConfigError, ValidationError
from dialoglab.models import ModelConfig, build_model, load_checkpoint
from dialoglab.numerics import Tensor
from dialoglab.numerics.optim import Adam, AdamState, clip_gradients, grad_norm, optimizer_step
from dialoglab import training
from dialoglab.synthetic import random_corpus
from dialoglab.training import (
    PlateauScheduler,
    TrainConfig,
    TrainLog,
    kl_weight,
    plateau_schedule,
    token_accuracy,
    train,
)

TINY = {"hidden": 8, "embed": 6, "heads": 2, "latent_dim": 4, "dropout": 0.0}


def hand_schedule(history, lr=1e-4, decay=0.5, patience=10):
    """Independent replay: the learning rate in force at every epoch, and after the last."""
    best, bad, out = float("inf"), 0, []
    for v in history:
        out.append(lr)
        if v <= best - 1e-6:
            best, bad = v, 0
        else:
            bad += 1
            if bad == patience:
                lr, bad = lr * decay, 0
    return out, lr


@pytest.fixture(scope="module")
def tiny_data():
    corpus = random_corpus(6, seed=4, vocab_size=12, turns=(2, 2), length=(2, 3))
    vocab = build_vocab(corpus)
    return vocab, [encode_dialog(d, vocab) for d in corpus]


class TestPlateau:
    def test_improving_keeps_lr(self):
        assert plateau_schedule([5.0, 4.0, 3.0, 2.0], 1e-4) == 1e-4

    def test_ten_flat_epochs_halve(self):
        # the first epoch sets the reference; the ten after it do not improve
        assert plateau_schedule([1.0] * 11, 1e-4) == 5e-5
        assert plateau_schedule([1.0] * 10, 1e-4) == 1e-4

    def test_two_plateaus(self):
        history = [3.0, 2.0] + [2.0] * 10 + [1.0, 0.5] + [0.6] * 10 + [0.7]
        assert len(history) == 25
        sched = PlateauScheduler(1e-4)
        lrs = [sched.step(v) for v in history]
        assert lrs.count(1e-4) == 11 and sched.lr == 2.5e-5
        assert lrs == hand_schedule(history)[0][1:] + [hand_schedule(history)[1]]

    def test_sub_threshold_gain_is_not_improvement(self):
        sched = PlateauScheduler(1e-4, patience=2)
        sched.step(1.0)
        sched.step(1.0 - 5e-7)
        assert sched.step(1.0 - 9e-7) == 5e-5

    def test_empty_history(self):
        with pytest.raises(ValidationError):
            plateau_schedule([], 1e-4)

    @given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=60))
    def test_lr_is_power_of_half_and_non_increasing(self, history):
        sched = PlateauScheduler(1e-4)
        lrs = [sched.step(v) for v in history]
        assert all(b <= a for a, b in zip(lrs, lrs[1:]))
        for lr in lrs:
            k = round(np.log2(1e-4 / lr))
            assert lr == 1e-4 * 0.5**k
        assert lrs[-1] == hand_schedule(history)[1]


class TestKlWeight:
    @pytest.mark.parametrize("step,expected", [(0, 0.0), (2500, 0.5), (5000, 1.0), (9000, 1.0)])
    def test_values(self, step, expected):
        assert kl_weight(step, 5000) == expected

    @given(st.integers(0, 20_000), st.integers(0, 20_000))
    def test_monotone_bounded(self, a, b):
        lo, hi = sorted((a, b))
        assert 0.0 <= kl_weight(lo, 5000) <= kl_weight(hi, 5000) <= 1.0

    def test_bad_anneal(self):
        with pytest.raises(ConfigError):
            kl_weight(1, 0)


class TestOptimizerContracts:
    def test_zero_gradient_only_decays(self):
        p = Tensor(np.array([2.0, -1.0]), requires_grad=True)
        optimizer_step([p], [np.zeros(2)], AdamState(), 0.1, 0.01)
        np.testing.assert_allclose(p.data, [2.0 - 0.1 * 0.01 * 2.0, -1.0 + 0.1 * 0.01])

    def test_descends_on_square(self):
        w = Tensor(np.array([1.0]), requires_grad=True)
        w.grad = 2 * w.data
        Adam([w], lr=1e-2).step()
        assert w.data[0] < 1.0

    def test_clip_factor_half(self):
        p = Tensor(np.zeros(1), requires_grad=True)
        p.grad = np.array([6.0])
        assert clip_gradients([p], 3.0) == 0.5 and grad_norm([p]) == 3.0

    @given(st.integers(0, 10_000), st.floats(0.1, 50.0))
    def test_post_clip_norm_bounded(self, seed, scale):
        r = np.random.default_rng(seed)
        ps = [Tensor(np.zeros(s), requires_grad=True) for s in ((3,), (2, 2))]
        for p in ps:
            p.grad = r.normal(size=p.shape) * scale
        clip_gradients(ps, 3.0)
        assert grad_norm(ps) <= 3.0 + 1e-9


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.lr, c.lr_decay, c.patience, c.clip_norm, c.weight_decay, c.epochs, c.seed) == (
            1e-4,
            0.5,
            10,
            3.0,
            1e-6,
            100,
            30,
        )

    def test_round_trip(self):
        assert TrainConfig.from_dict(TrainConfig(lr=0.01).to_dict()) == TrainConfig(lr=0.01)

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"learning_rate": 1.0})

    @pytest.mark.parametrize("kwargs", [{"lr": 0}, {"lr_decay": 1.0}, {"patience": 0}, {"batch_size": 0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)


class TestTrain:
    def test_memorises_single_dialog(self, tiny_data):
        vocab, data = tiny_data
        model = build_model(ModelConfig("hred", len(vocab), **TINY), 30)
        cfg = TrainConfig(lr=1e-2, epochs=500, batch_size=1, early_stop_patience=500)
        log = train(model, data[:1], data[:1], cfg, stop_when=lambda m, r: r.train_loss < 0.05)
        assert log.records[-1].train_loss < 0.05

    def test_deterministic(self, tiny_data):
        vocab, data = tiny_data

        def run():
            model = build_model(ModelConfig("vhred", len(vocab), **dict(TINY, dropout=0.3)), 30)
            return train(model, data[:4], data[4:], TrainConfig(epochs=3, batch_size=2, lr=1e-3))

        assert run().same_trajectory(run())

    def test_early_stop_patience_one(self, tiny_data, monkeypatch):
        vocab, data = tiny_data
        model = build_model(ModelConfig("hred", len(vocab), **TINY), 30)
        monkeypatch.setattr(training, "evaluate_loss", lambda *a, **k: 2.0)
        log = train(model, data[:4], data[4:], TrainConfig(epochs=10, early_stop_patience=1))
        assert log.stopped_early and len(log) == 2

    def test_empty_split(self, tiny_data):
        vocab, data = tiny_data
        with pytest.raises(ValidationError):
            train(build_model(ModelConfig("hred", len(vocab), **TINY)), data, [], TrainConfig(epochs=1))

    def test_checkpoint_and_log_formats(self, tiny_data, tmp_path):
        vocab, data = tiny_data
        model = build_model(ModelConfig("seq2seq_attn", len(vocab), **TINY), 30)
        log = train(model, data[:4], data[4:], TrainConfig(epochs=2, lr=1e-3), vocab=vocab, run_dir=tmp_path)
        assert log.checkpoint == str(tmp_path / "seq2seq_attn" / "best.ckpt")
        restored, v2, _ = load_checkpoint(log.checkpoint)
        assert v2 == vocab
        rows = list(csv.reader(io.StringIO(log.to_csv())))
        assert rows[0] == ["epoch", "train_loss", "valid_loss", "lr", "kl_weight"] and len(rows) == 3
        assert json.loads(log.to_json())["best_epoch"] == log.best_epoch
        assert token_accuracy(model, data) == token_accuracy(restored, data)

    def test_lr_column_follows_schedule(self, tiny_data):
        vocab, data = tiny_data
        model = build_model(ModelConfig("hred", len(vocab), **TINY), 30)
        log = train(model, data[:4], data[4:], TrainConfig(epochs=6, lr=3.0, patience=2, early_stop_patience=50))
        expected, _ = hand_schedule(log.column("valid_loss"), 3.0, 0.5, 2)
        assert log.column("lr") == expected

    def test_trainlog_equality_ignores_time(self):
        from dialoglab.training import EpochRecord

        a = TrainLog([EpochRecord(1, 1.0, 1.0, 1e-4, 0.0, 0.5)])
        b = TrainLog([EpochRecord(1, 1.0, 1.0, 1e-4, 0.0, 0.7)])
        assert a.same_trajectory(b)
