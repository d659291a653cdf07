"""Differentiable primitives.

Each function computes its forward value with numpy and registers a closure
mapping the output gradient to one gradient per parent (``None`` for parents
that receive nothing).
"""

from __future__ import annotations

import numpy as np

from dialoglab.errors import ConfigError, DimensionError, VocabLookupError
from dialoglab.numerics import kernels
from dialoglab.numerics.tensor import DTYPE, Tensor, as_tensor

_make = Tensor._make


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shapes(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"shapes {a.shape} and {b.shape} do not broadcast") from None


# -- arithmetic ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b)
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


def matmul(a, b) -> Tensor:
    """Matrix product with numpy ``matmul`` broadcasting rules."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    a2 = ad[None, :] if ad.ndim == 1 else ad
    b2 = bd[:, None] if bd.ndim == 1 else bd
    out = a2 @ b2
    out_shape = out.shape
    if ad.ndim == 1:
        out = out[..., 0, :]
    if bd.ndim == 1:
        out = out[..., 0]

    def backward(g):
        g2 = g.reshape(out_shape)
        ga = g2 @ np.swapaxes(b2, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g2
        return _unbroadcast(ga, a2.shape).reshape(ad.shape), _unbroadcast(gb, b2.shape).reshape(bd.shape)

    return _make(out, (a, b), backward)


# -- elementwise nonlinearities ---------------------------------------------------


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    y = np.sqrt(x.data)
    return _make(y, (x,), lambda g: (g * 0.5 / y,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    keep = x.data > 0
    return _make(np.where(keep, x.data, 0.0), (x,), lambda g: (g * keep,))


# -- reductions and shape -------------------------------------------------------


def sum(x, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def index(x, idx) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in parts)

    def backward(g):
        out = np.zeros(shape, dtype=DTYPE)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _make(np.array(x.data[idx], dtype=DTYPE), (x,), backward)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty list")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat shapes {[t.shape for t in tensors]}: {exc}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(data, tuple(tensors), lambda g: tuple(np.split(g, sizes, axis=axis)))


def stack(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("stack of an empty list")
    data = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)
    return _make(
        data,
        tuple(tensors),
        lambda g: tuple(np.squeeze(part, axis=axis) for part in np.split(g, n, axis=axis)),
    )


# -- normalisers ----------------------------------------------------------------


def softmax(x, axis=-1, mask=None) -> Tensor:
    """Max-shifted softmax along ``axis``.

    ``mask`` (boolean, broadcastable to ``x``) marks valid entries; masked
    entries get probability 0 and a row with no valid entry is all zeros.
    """
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[axis] == 0:
        raise DimensionError(f"softmax over an empty axis (shape {x.shape})")
    xd = x.data
    if mask is None:
        shifted = xd - xd.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axis, keepdims=True)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        filled = np.where(mask, xd, -np.inf)
        top = filled.max(axis=axis, keepdims=True)
        top = np.where(np.isfinite(top), top, 0.0)
        e = np.where(mask, np.exp(np.where(mask, xd - top, 0.0)), 0.0)
        total = e.sum(axis=axis, keepdims=True)
        y = e / np.where(total > 0, total, 1.0)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), backward)


def log_softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    p = np.exp(y)
    return _make(y, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def cross_entropy(logits, targets, ignore_index: int | None = None) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under ``logits`` [N, V]."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    flat = logits.data.reshape(-1, logits.shape[-1])
    if flat.shape[0] != targets.shape[0]:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    valid = np.ones_like(targets, dtype=bool) if ignore_index is None else targets != ignore_index
    count = int(valid.sum())
    if count == 0:
        raise DimensionError("cross_entropy: no non-ignored targets")
    shifted = flat - flat.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(flat.shape[0])
    safe_t = np.where(valid, targets, 0)
    nll = lse - shifted[rows, safe_t]
    loss = float(nll[valid].sum()) / count
    shape = logits.shape

    def backward(g):
        p = np.exp(shifted - lse[:, None])
        p[rows, safe_t] -= 1.0
        p *= (valid / count)[:, None]
        return ((g * p).reshape(shape),)

    return _make(np.asarray(loss), (logits,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def backward(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(xhat * gd + bias.data, (x, gain, bias), backward)


# -- lookup / regularisation --------------------------------------------------------


def embedding(weight, ids) -> Tensor:
    weight = as_tensor(weight)
    ids = np.asarray(ids, dtype=np.int64)
    vocab = weight.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = ids[(ids < 0) | (ids >= vocab)][0]
        raise VocabLookupError(f"token id {int(bad)} outside vocabulary of size {vocab}")
    shape = weight.shape

    def backward(g):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (out,)

    return _make(weight.data[ids], (weight,), backward)


def dropout(x, p: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    """Inverted dropout; the identity when ``training`` is false or ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


# -- fused kernels -----------------------------------------------------------------


def gru_cell(x, h, w_ih, w_hh, b_ih, b_hh, mask=None) -> Tensor:
    """One GRU step for a batch: ``x`` [B, in], ``h`` [B, H] -> [B, H].

    ``h' = (1 - z) * h + z * n`` with update gate ``z``, reset gate ``r`` and
    candidate ``n = tanh(W_n x + b_in + r * (U_n h + b_hn))``.  Rows whose
    ``mask`` entry is 0 carry ``h`` through unchanged.
    """
    x, h, w_ih, w_hh, b_ih, b_hh = (as_tensor(t) for t in (x, h, w_ih, w_hh, b_ih, b_hh))
    hid = h.shape[-1]
    if x.shape[-1] != w_ih.shape[0] or w_ih.shape[1] != 3 * hid or w_hh.shape != (hid, 3 * hid):
        raise DimensionError(
            f"gru_cell shapes: x {x.shape}, h {h.shape}, w_ih {w_ih.shape}, w_hh {w_hh.shape}"
        )
    xd, hd = x.data, h.data
    mask = np.ones(hd.shape[0]) if mask is None else np.asarray(mask, dtype=DTYPE)
    gi = xd @ w_ih.data + b_ih.data
    gh = hd @ w_hh.data + b_hh.data
    out, r, z, n = kernels.gru_gates_forward(gi, gh, hd, mask)

    def backward(g):
        dgi, dgh, dh = kernels.gru_gates_backward(np.ascontiguousarray(g), hd, gh, r, z, n, mask)
        return (
            dgi @ w_ih.data.T,
            dh + dgh @ w_hh.data.T,
            xd.T @ dgi,
            hd.T @ dgh,
            dgi.sum(axis=0),
            dgh.sum(axis=0),
        )

    return _make(out, (x, h, w_ih, w_hh, b_ih, b_hh), backward)


def additive_scores(query_proj, key_proj, v) -> Tensor:
    """``e[b, k] = v . tanh(query_proj[b] + key_proj[b, k])``."""
    qp, kp, v = as_tensor(query_proj), as_tensor(key_proj), as_tensor(v)
    if qp.ndim != 2 or kp.ndim != 3 or kp.shape[0] != qp.shape[0] or kp.shape[2] != qp.shape[1]:
        raise DimensionError(f"additive_scores shapes: query {qp.shape}, keys {kp.shape}")
    e, t = kernels.additive_scores_forward(
        np.ascontiguousarray(qp.data), np.ascontiguousarray(kp.data), np.ascontiguousarray(v.data)
    )

    def backward(g):
        return kernels.additive_scores_backward(np.ascontiguousarray(g), t, v.data)

    return _make(e, (qp, kp, v), backward)
