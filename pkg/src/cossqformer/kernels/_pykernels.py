"""Reference kernels in NumPy / plain Python.

Same signatures and array conventions as the compiled ``_ckernels`` module:
every sequence array is grouped as ``(G, N, d)`` with ``G`` independent
(batch x head) groups, float64, C-contiguous.
"""

import math

import numpy as np

NAME = "python"


def direct_forward(qf, kf, v, w, eps):
    """Quadratic re-weighted attention.

    Returns ``(out, attn, den)`` where ``attn`` is the row-normalized score
    matrix and ``den`` the stabilized row normalizer.
    """
    s = np.einsum("gnd,gmd->gnm", qf, kf) * w
    den = s.sum(axis=-1) + eps
    out = (s @ v) / den[..., None]
    attn = s / den[..., None]
    return out, attn, den


def direct_backward(gout, qf, kf, v, w, out, attn, den):
    gs = (gout @ np.swapaxes(v, 1, 2)) - np.sum(gout * out, axis=-1)[..., None]
    gs /= den[..., None]
    gw = gs * w
    gq = gw @ kf
    gk = np.swapaxes(gw, 1, 2) @ qf
    gv = np.swapaxes(attn, 1, 2) @ gout
    return gq, gk, gv


def _prefix_index(n, m):
    return np.minimum(np.arange(n), m - 1)


def _three(x, c, s):
    return (x, x * c[None, :, None], x * s[None, :, None])


def linear_forward(qf, kf, v, cq, sq, ck, sk, causal, eps):
    """Decomposed cos-square attention, O((N + M) d1 d2).

    Returns ``(out, den)``; ``den`` already includes ``eps``.
    """
    qs = _three(qf, cq, sq)
    ks = _three(kf, ck, sk)
    n = qf.shape[1]
    m = kf.shape[1]
    num = np.zeros((qf.shape[0], n, v.shape[2]))
    den = np.full((qf.shape[0], n), float(eps))
    if causal:
        idx = _prefix_index(n, m)
        for qx, kx in zip(qs, ks):
            pref = np.cumsum(kx[:, :, :, None] * v[:, :, None, :], axis=1)[:, idx]
            tpref = np.cumsum(kx, axis=1)[:, idx]
            num += np.einsum("gnd,gnde->gne", qx, pref)
            den += np.einsum("gnd,gnd->gn", qx, tpref)
    else:
        for qx, kx in zip(qs, ks):
            num += qx @ (np.swapaxes(kx, 1, 2) @ v)
            den += np.einsum("gnd,gd->gn", qx, kx.sum(axis=1))
    return num / den[..., None], den


def linear_backward(gout, qf, kf, v, cq, sq, ck, sk, causal, out, den):
    qs = _three(qf, cq, sq)
    ks = _three(kf, ck, sk)
    n = qf.shape[1]
    m = kf.shape[1]
    gnum = gout / den[..., None]
    gden = -np.sum(gout * out, axis=-1) / den
    gq_parts = []
    gk = np.zeros_like(kf)
    gv = np.zeros_like(v)
    key_scale = (None, ck, sk)
    if causal:
        idx = _prefix_index(n, m)
        for qx, kx, sc in zip(qs, ks, key_scale):
            pref = np.cumsum(kx[:, :, :, None] * v[:, :, None, :], axis=1)[:, idx]
            tpref = np.cumsum(kx, axis=1)[:, idx]
            gq_parts.append(
                np.einsum("gnde,gne->gnd", pref, gnum) + tpref * gden[..., None]
            )
            # query i feeds keys 0..idx[i]: scatter, then suffix-sum
            rs = np.zeros((qf.shape[0], m, qf.shape[2], v.shape[2]))
            us = np.zeros_like(kf)
            np.add.at(rs, (slice(None), idx), qx[:, :, :, None] * gnum[:, :, None, :])
            np.add.at(us, (slice(None), idx), qx * gden[..., None])
            rs = np.cumsum(rs[:, ::-1], axis=1)[:, ::-1]
            us = np.cumsum(us[:, ::-1], axis=1)[:, ::-1]
            gkx = np.einsum("gjde,gje->gjd", rs, v) + us
            gv += np.einsum("gjd,gjde->gje", kx, rs)
            gk += gkx if sc is None else gkx * sc[None, :, None]
    else:
        for qx, kx, sc in zip(qs, ks, key_scale):
            s_acc = np.swapaxes(kx, 1, 2) @ v
            t_acc = kx.sum(axis=1)
            gq_parts.append(gnum @ np.swapaxes(s_acc, 1, 2) + gden[..., None] * t_acc[:, None, :])
            r_tot = np.swapaxes(qx, 1, 2) @ gnum
            u_tot = np.einsum("gnd,gn->gd", qx, gden)
            gkx = v @ np.swapaxes(r_tot, 1, 2) + u_tot[:, None, :]
            gv += kx @ r_tot
            gk += gkx if sc is None else gkx * sc[None, :, None]
    gq = gq_parts[0] + gq_parts[1] * cq[None, :, None] + gq_parts[2] * sq[None, :, None]
    return gq, gk, gv


def _softmin(a, b, c, gamma):
    lo = min(a, b, c)
    if lo == math.inf:
        return math.inf
    total = (
        math.exp(-(a - lo) / gamma)
        + math.exp(-(b - lo) / gamma)
        + math.exp(-(c - lo) / gamma)
    )
    return lo - gamma * math.log(total)


def softdtw_forward(y, yhat, gamma):
    """Soft-DTW accumulated cost table, padded to ``(T1 + 2, T2 + 2)``."""
    t1 = len(y)
    t2 = len(yhat)
    r = np.full((t1 + 2, t2 + 2), np.inf)
    r[0, 0] = 0.0
    for i in range(1, t1 + 1):
        yi = float(y[i - 1])
        for j in range(1, t2 + 1):
            d = (yi - float(yhat[j - 1])) ** 2
            r[i, j] = d + _softmin(r[i - 1, j], r[i, j - 1], r[i - 1, j - 1], gamma)
    return r


def softdtw_backward(y, yhat, r, gamma):
    """Expected alignment matrix ``E = dR[T1, T2] / dD``, shape ``(T1, T2)``."""
    t1 = len(y)
    t2 = len(yhat)
    r = r.copy()
    dist = np.zeros((t1 + 2, t2 + 2))
    for i in range(t1):
        for j in range(t2):
            dist[i + 1, j + 1] = (float(y[i]) - float(yhat[j])) ** 2
    e = np.zeros((t1 + 2, t2 + 2))
    r[1 : t1 + 1, t2 + 1] = -np.inf
    r[t1 + 1, 1 : t2 + 1] = -np.inf
    r[t1 + 1, t2 + 1] = r[t1, t2]
    e[t1 + 1, t2 + 1] = 1.0
    for j in range(t2, 0, -1):
        for i in range(t1, 0, -1):
            a = math.exp((r[i + 1, j] - r[i, j] - dist[i + 1, j]) / gamma)
            b = math.exp((r[i, j + 1] - r[i, j] - dist[i, j + 1]) / gamma)
            c = math.exp((r[i + 1, j + 1] - r[i, j] - dist[i + 1, j + 1]) / gamma)
            e[i, j] = e[i + 1, j] * a + e[i, j + 1] * b + e[i + 1, j + 1] * c
    return e[1 : t1 + 1, 1 : t2 + 1]
