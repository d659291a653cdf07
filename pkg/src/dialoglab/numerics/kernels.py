"""Hot inner kernels, each with a numba and a pure-numpy implementation.

The public names at the bottom of the module are bound to one or the other
according to :data:`dialoglab._jit.JIT_ENABLED`.  Both variants are always
importable (``*_numpy`` / ``*_numba``) so they can be benchmarked and
cross-checked against each other.

GRU gate columns are laid out as ``[reset | update | candidate]``.
"""

import math

import numpy as np

from dialoglab._jit import njit, select


# -- GRU gates --------------------------------------------------------------


def _sigmoid_np(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_gates_forward_numpy(gi, gh, h, mask):
    hid = h.shape[1]
    r = _sigmoid_np(gi[:, :hid] + gh[:, :hid])
    z = _sigmoid_np(gi[:, hid : 2 * hid] + gh[:, hid : 2 * hid])
    n = np.tanh(gi[:, 2 * hid :] + r * gh[:, 2 * hid :])
    m = mask[:, None]
    out = m * ((1.0 - z) * h + z * n) + (1.0 - m) * h
    return out, r, z, n


def gru_gates_backward_numpy(dout, h, gh, r, z, n, mask):
    hid = h.shape[1]
    m = mask[:, None]
    dhn = m * dout
    dh = (1.0 - m) * dout + dhn * (1.0 - z)
    dz = dhn * (n - h)
    dn_pre = dhn * z * (1.0 - n * n)
    dr_pre = dn_pre * gh[:, 2 * hid :] * r * (1.0 - r)
    dz_pre = dz * z * (1.0 - z)
    dgi = np.concatenate([dr_pre, dz_pre, dn_pre], axis=1)
    dgh = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=1)
    return dgi, dgh, dh


@njit
def gru_gates_forward_numba(gi, gh, h, mask):
    batch, hid = h.shape
    out = np.empty_like(h)
    r = np.empty_like(h)
    z = np.empty_like(h)
    n = np.empty_like(h)
    for b in range(batch):
        m = mask[b]
        for j in range(hid):
            rj = 0.5 * (1.0 + math.tanh(0.5 * (gi[b, j] + gh[b, j])))
            zj = 0.5 * (1.0 + math.tanh(0.5 * (gi[b, hid + j] + gh[b, hid + j])))
            nj = math.tanh(gi[b, 2 * hid + j] + rj * gh[b, 2 * hid + j])
            hj = h[b, j]
            out[b, j] = m * ((1.0 - zj) * hj + zj * nj) + (1.0 - m) * hj
            r[b, j] = rj
            z[b, j] = zj
            n[b, j] = nj
    return out, r, z, n


@njit
def gru_gates_backward_numba(dout, h, gh, r, z, n, mask):
    batch, hid = h.shape
    dgi = np.empty((batch, 3 * hid))
    dgh = np.empty((batch, 3 * hid))
    dh = np.empty_like(h)
    for b in range(batch):
        m = mask[b]
        for j in range(hid):
            rj = r[b, j]
            zj = z[b, j]
            nj = n[b, j]
            dhn = m * dout[b, j]
            dh[b, j] = (1.0 - m) * dout[b, j] + dhn * (1.0 - zj)
            dz = dhn * (nj - h[b, j])
            dn_pre = dhn * zj * (1.0 - nj * nj)
            dr_pre = dn_pre * gh[b, 2 * hid + j] * rj * (1.0 - rj)
            dz_pre = dz * zj * (1.0 - zj)
            dgi[b, j] = dr_pre
            dgi[b, hid + j] = dz_pre
            dgi[b, 2 * hid + j] = dn_pre
            dgh[b, j] = dr_pre
            dgh[b, hid + j] = dz_pre
            dgh[b, 2 * hid + j] = dn_pre * rj
    return dgi, dgh, dh


# -- additive attention scores ------------------------------------------------


def additive_scores_forward_numpy(qp, kp, v):
    t = np.tanh(qp[:, None, :] + kp)
    return t @ v, t


def additive_scores_backward_numpy(g, t, v):
    dpre = g[:, :, None] * v * (1.0 - t * t)
    return dpre.sum(axis=1), dpre, np.einsum("bk,bkd->d", g, t)


@njit
def additive_scores_forward_numba(qp, kp, v):
    batch, keys, dim = kp.shape
    t = np.empty_like(kp)
    e = np.zeros((batch, keys))
    for b in range(batch):
        for k in range(keys):
            acc = 0.0
            for d in range(dim):
                tv = math.tanh(qp[b, d] + kp[b, k, d])
                t[b, k, d] = tv
                acc += tv * v[d]
            e[b, k] = acc
    return e, t


@njit
def additive_scores_backward_numba(g, t, v):
    batch, keys, dim = t.shape
    dqp = np.zeros((batch, dim))
    dkp = np.empty_like(t)
    dv = np.zeros(dim)
    for b in range(batch):
        for k in range(keys):
            gk = g[b, k]
            for d in range(dim):
                tv = t[b, k, d]
                dp = gk * v[d] * (1.0 - tv * tv)
                dkp[b, k, d] = dp
                dqp[b, d] += dp
                dv[d] += gk * tv
    return dqp, dkp, dv


# -- metric kernels ------------------------------------------------------------


def max_cosine_rows_numpy(a, b):
    """For every row of ``a``, the largest cosine against any row of ``b``.

    Zero-norm pairs count as cosine 0; bitwise-identical nonzero rows count as
    exactly 1 so rounding in the norms cannot pull a perfect match below 1.
    """
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    sims = a @ b.T
    denom = np.outer(na, nb)
    safe = np.where(denom > 0.0, denom, 1.0)
    sims = np.clip(np.where(denom > 0.0, sims / safe, 0.0), -1.0, 1.0)
    same = (a[:, None, :] == b[None, :, :]).all(axis=2) & (denom > 0.0)
    sims = np.where(same, 1.0, sims)
    return sims.max(axis=1)


@njit
def max_cosine_rows_numba(a, b):
    n, dim = a.shape
    m = b.shape[0]
    nb = np.empty(m)
    for j in range(m):
        acc = 0.0
        for d in range(dim):
            acc += b[j, d] * b[j, d]
        nb[j] = math.sqrt(acc)
    out = np.empty(n)
    for i in range(n):
        na = 0.0
        for d in range(dim):
            na += a[i, d] * a[i, d]
        na = math.sqrt(na)
        best = -np.inf
        for j in range(m):
            denom = na * nb[j]
            if denom > 0.0:
                dot = 0.0
                same = True
                for d in range(dim):
                    dot += a[i, d] * b[j, d]
                    if a[i, d] != b[j, d]:
                        same = False
                c = 1.0 if same else min(1.0, max(-1.0, dot / denom))
            else:
                c = 0.0
            if c > best:
                best = c
        out[i] = best
    return out


def signed_extrema_numpy(x):
    """Per column, the entry of largest magnitude; ties go to the positive one."""
    hi = x.max(axis=0)
    lo = x.min(axis=0)
    return np.where(hi >= -lo, hi, lo)


@njit
def signed_extrema_numba(x):
    n, dim = x.shape
    out = np.empty(dim)
    for d in range(dim):
        hi = x[0, d]
        lo = x[0, d]
        for i in range(1, n):
            v = x[i, d]
            if v > hi:
                hi = v
            if v < lo:
                lo = v
        out[d] = hi if hi >= -lo else lo
    return out


gru_gates_forward = select(gru_gates_forward_numba, gru_gates_forward_numpy)
gru_gates_backward = select(gru_gates_backward_numba, gru_gates_backward_numpy)
additive_scores_forward = select(additive_scores_forward_numba, additive_scores_forward_numpy)
additive_scores_backward = select(additive_scores_backward_numba, additive_scores_backward_numpy)
max_cosine_rows = select(max_cosine_rows_numba, max_cosine_rows_numpy)
signed_extrema = select(signed_extrema_numba, signed_extrema_numpy)
