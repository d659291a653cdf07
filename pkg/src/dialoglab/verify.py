"""End-to-end gradient verification at tiny dimensions.

:func:`tiny_gradcheck` differentiates the teacher-forced loss with respect to
the shared embedding table, the tensor every path of every architecture
starts from (encoder inputs, decoder inputs, VHRED's response encoding), so
the check covers the whole network from input to loss.

:func:`parameter_sweep` probes every parameter coordinate as well.  A float64
loss near 3 is quantised in steps of ``spacing(f) ~ 4.4e-16``, so a central
difference at ``h = 1e-5`` cannot resolve a derivative better than about
``spacing(f) / (2h) ~ 2e-11`` in absolute terms.  Coordinates whose true
derivative is below ``resolution_floor`` (about ``2e-8``) therefore cannot
reach 1e-3 relative error no matter how the gradient is computed.  The sweep
lists every coordinate at or above the tolerance with its analytic/numeric
gap measured in units of that quantum.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from dialoglab.corpus import Dialog, Utterance, Vocabulary, encode_dialog, make_batch
from dialoglab.models import ModelConfig, build_model
from dialoglab.numerics import grad_check
from dialoglab.numerics.gradcheck import numeric_grad, relative_error

GRADCHECK_TOLERANCE = 1e-3
STEP = 1e-5
TINY = {"hidden": 8, "embed": 6, "heads": 2, "latent_dim": 4}
TINY_VOCAB = 20


def tiny_problem(architecture: str, seed: int = 30):
    """A model at hidden 8 / embed 6 / vocab 20 in evaluation mode, and a batch
    of two dialogs with two context utterances each."""
    rng = np.random.default_rng(seed)
    vocab = Vocabulary([f"w{i}" for i in range(TINY_VOCAB - 5)])
    words = vocab.to_list()[5:]

    def utt(n):
        return Utterance(tuple(rng.choice(words, n)))

    dialogs = [Dialog((utt(3), utt(2)), utt(3)) for _ in range(2)]
    batch = make_batch([encode_dialog(d, vocab) for d in dialogs])
    model = build_model(ModelConfig(architecture, len(vocab), **TINY), seed)
    model.eval()
    return model, batch


@dataclass
class GradCheckResult:
    architecture: str
    max_error: float
    coordinates: int
    loss: float
    seconds: float

    def to_dict(self) -> dict:
        return asdict(self)


def tiny_gradcheck(architecture: str, seed: int = 30, h: float = STEP) -> GradCheckResult:
    """Max relative error of d(loss)/d(embedding table) against central differences."""
    start = time.perf_counter()
    model, batch = tiny_problem(architecture, seed)
    table = model.embedding.weight
    err = grad_check(lambda _: model.loss(batch), table, h)
    model.zero_grad()
    return GradCheckResult(architecture, err, table.size, model.loss(batch).item(), time.perf_counter() - start)


def resolution_floor(loss_value: float, h: float = STEP, tolerance: float = GRADCHECK_TOLERANCE) -> float:
    """Smallest derivative a float64 central difference can resolve to ``tolerance``."""
    return float(np.spacing(abs(loss_value)) / (2.0 * h) / tolerance)


QUANTA_EXPLAINED = 4.0


@dataclass
class SweepResult:
    architecture: str
    loss: float
    quantum: float  # spacing(loss) / (2h): the resolution of one central difference
    coordinates: int = 0
    max_error: float = 0.0
    failures: list[dict] = field(default_factory=list)  # coordinates at or above the tolerance

    @property
    def max_gap_quanta(self) -> float:
        return max((f["gap_quanta"] for f in self.failures), default=0.0)

    @property
    def explained_by_resolution(self) -> bool:
        """Every failing coordinate misses by at most a few loss quanta."""
        return self.max_gap_quanta <= QUANTA_EXPLAINED


def parameter_sweep(architecture: str, seed: int = 30, h: float = STEP) -> SweepResult:
    """Central differences over every parameter coordinate."""
    model, batch = tiny_problem(architecture, seed)
    params = dict(model.named_parameters())
    model.zero_grad()
    loss = model.loss(batch)
    f = loss.item()
    loss.backward()
    result = SweepResult(architecture, f, float(np.spacing(abs(f)) / (2.0 * h)))
    for name, p in params.items():
        analytic = np.zeros(p.shape) if p.grad is None else p.grad.copy()
        numeric = numeric_grad(lambda: model.loss(batch), p, h)
        err = relative_error(analytic, numeric)
        result.coordinates += err.size
        result.max_error = max(result.max_error, float(err.max(initial=0.0)))
        for idx in zip(*np.nonzero(err >= GRADCHECK_TOLERANCE)):
            result.failures.append(
                {
                    "tensor": name,
                    "index": [int(i) for i in idx],
                    "analytic": float(analytic[idx]),
                    "numeric": float(numeric[idx]),
                    "gap_quanta": float(abs(analytic[idx] - numeric[idx]) / result.quantum),
                }
            )
    model.zero_grad()
    return result
