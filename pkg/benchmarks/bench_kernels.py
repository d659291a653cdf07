"""Time each numba kernel against its numpy twin and check they agree.

    python3 benchmarks/bench_kernels.py [--repeat N]

The first jitted call (compilation or cache load) is excluded from the timings.
"""

import argparse
import time

import numpy as np

from dialoglab.numerics import kernels


def gru_inputs(rng, batch=32, hidden=512):
    gi = rng.normal(size=(batch, 3 * hidden))
    gh = rng.normal(size=(batch, 3 * hidden))
    h = rng.normal(size=(batch, hidden))
    mask = (rng.random(batch) < 0.8).astype(float)
    return gi, gh, h, mask


def gru_backward_inputs(rng, batch=32, hidden=512):
    gi, gh, h, mask = gru_inputs(rng, batch, hidden)
    _, r, z, n = kernels.gru_gates_forward_numpy(gi, gh, h, mask)
    return rng.normal(size=(batch, hidden)), h, gh, r, z, n, mask


def additive_inputs(rng, batch=32, keys=40, dim=512):
    return rng.normal(size=(batch, dim)), rng.normal(size=(batch, keys, dim)), rng.normal(size=dim)


def additive_backward_inputs(rng, batch=32, keys=40, dim=512):
    qp, kp, v = additive_inputs(rng, batch, keys, dim)
    _, t = kernels.additive_scores_forward_numpy(qp, kp, v)
    return rng.normal(size=(batch, keys)), t, v


CASES = {
    "gru_gates_forward": gru_inputs,
    "gru_gates_backward": gru_backward_inputs,
    "additive_scores_forward": additive_inputs,
    "additive_scores_backward": additive_backward_inputs,
    "max_cosine_rows": lambda rng: (rng.normal(size=(30, 300)), rng.normal(size=(30, 300))),
    "signed_extrema": lambda rng: (rng.normal(size=(30, 300)),),
}


def best_time(fn, args, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def as_tuple(out):
    return out if isinstance(out, tuple) else (out,)


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=50)
    args = parser.parse_args(argv)
    rng = np.random.default_rng(30)
    print(f"{'kernel':<26}{'numpy us':>10}{'numba us':>10}{'speedup':>9}{'max diff':>11}")
    for name, make in CASES.items():
        inputs = make(rng)
        fast = getattr(kernels, f"{name}_numba")
        slow = getattr(kernels, f"{name}_numpy")
        diff = max(float(np.abs(a - b).max()) for a, b in zip(as_tuple(fast(*inputs)), as_tuple(slow(*inputs))))
        t_slow = best_time(slow, inputs, args.repeat)
        t_fast = best_time(fast, inputs, args.repeat)
        print(f"{name:<26}{1e6 * t_slow:>10.1f}{1e6 * t_fast:>10.1f}{t_slow / t_fast:>8.2f}x{diff:>11.1e}")


if __name__ == "__main__":
    main()
