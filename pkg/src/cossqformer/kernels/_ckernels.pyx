# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled attention and soft-DTW kernels.

Mirrors ``_pykernels`` one-for-one. The streaming attention kernels keep
only ``O(d1 * d2)`` accumulator state per group.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()

NAME = "cython"


def direct_forward(const double[:, :, ::1] qf, const double[:, :, ::1] kf,
                   const double[:, :, ::1] v, const double[:, ::1] w, double eps):
    cdef Py_ssize_t G = qf.shape[0], N = qf.shape[1], D1 = qf.shape[2]
    cdef Py_ssize_t M = kf.shape[1], D2 = v.shape[2]
    out_a = np.zeros((G, N, D2))
    attn_a = np.zeros((G, N, M))
    den_a = np.zeros((G, N))
    cdef double[:, :, ::1] out = out_a
    cdef double[:, :, ::1] attn = attn_a
    cdef double[:, ::1] den = den_a
    cdef Py_ssize_t g, i, j, d, e
    cdef double s, dn, wij
    for g in range(G):
        for i in range(N):
            dn = 0.0
            for j in range(M):
                wij = w[i, j]
                if wij == 0.0:
                    continue
                s = 0.0
                for d in range(D1):
                    s += qf[g, i, d] * kf[g, j, d]
                s *= wij
                attn[g, i, j] = s
                dn += s
                for e in range(D2):
                    out[g, i, e] += s * v[g, j, e]
            dn += eps
            den[g, i] = dn
            for e in range(D2):
                out[g, i, e] /= dn
            for j in range(M):
                attn[g, i, j] /= dn
    return out_a, attn_a, den_a


def direct_backward(const double[:, :, ::1] gout, const double[:, :, ::1] qf,
                    const double[:, :, ::1] kf, const double[:, :, ::1] v,
                    const double[:, ::1] w, const double[:, :, ::1] out,
                    const double[:, :, ::1] attn, const double[:, ::1] den):
    cdef Py_ssize_t G = qf.shape[0], N = qf.shape[1], D1 = qf.shape[2]
    cdef Py_ssize_t M = kf.shape[1], D2 = v.shape[2]
    gq_a = np.zeros((G, N, D1))
    gk_a = np.zeros((G, M, D1))
    gv_a = np.zeros((G, M, D2))
    cdef double[:, :, ::1] gq = gq_a
    cdef double[:, :, ::1] gk = gk_a
    cdef double[:, :, ::1] gv = gv_a
    cdef Py_ssize_t g, i, j, d, e
    cdef double go_out, gs, a, wij
    for g in range(G):
        for i in range(N):
            go_out = 0.0
            for e in range(D2):
                go_out += gout[g, i, e] * out[g, i, e]
            for j in range(M):
                wij = w[i, j]
                if wij == 0.0:
                    continue
                gs = -go_out
                a = attn[g, i, j]
                for e in range(D2):
                    gs += gout[g, i, e] * v[g, j, e]
                    gv[g, j, e] += a * gout[g, i, e]
                gs = gs / den[g, i] * wij
                for d in range(D1):
                    gq[g, i, d] += gs * kf[g, j, d]
                    gk[g, j, d] += gs * qf[g, i, d]
    return gq_a, gk_a, gv_a


cdef inline void _add_key(double[:, :, ::1] S, double[:, ::1] T,
                          const double[:, :, ::1] kf, const double[:, :, ::1] v,
                          Py_ssize_t g, Py_ssize_t j, double c, double s) noexcept nogil:
    cdef Py_ssize_t D1 = kf.shape[2], D2 = v.shape[2], d, e
    cdef double k0, vj
    for d in range(D1):
        k0 = kf[g, j, d]
        T[0, d] += k0
        T[1, d] += k0 * c
        T[2, d] += k0 * s
        for e in range(D2):
            vj = k0 * v[g, j, e]
            S[0, d, e] += vj
            S[1, d, e] += vj * c
            S[2, d, e] += vj * s


cdef inline void _emit_query(double[:, :, ::1] S, double[:, ::1] T,
                             const double[:, :, ::1] qf, double[:, :, ::1] out,
                             double[:, ::1] den, Py_ssize_t g, Py_ssize_t i,
                             double c, double s, double eps) noexcept nogil:
    cdef Py_ssize_t D1 = qf.shape[2], D2 = out.shape[2], d, e
    cdef double q0, qc, qs, dn = eps
    for d in range(D1):
        q0 = qf[g, i, d]
        qc = q0 * c
        qs = q0 * s
        dn += q0 * T[0, d] + qc * T[1, d] + qs * T[2, d]
        for e in range(D2):
            out[g, i, e] += q0 * S[0, d, e] + qc * S[1, d, e] + qs * S[2, d, e]
    den[g, i] = dn
    for e in range(D2):
        out[g, i, e] /= dn


def linear_forward(const double[:, :, ::1] qf, const double[:, :, ::1] kf,
                   const double[:, :, ::1] v, const double[::1] cq,
                   const double[::1] sq, const double[::1] ck,
                   const double[::1] sk, bint causal, double eps):
    cdef Py_ssize_t G = qf.shape[0], N = qf.shape[1], D1 = qf.shape[2]
    cdef Py_ssize_t M = kf.shape[1], D2 = v.shape[2]
    out_a = np.zeros((G, N, D2))
    den_a = np.zeros((G, N))
    S_a = np.zeros((3, D1, D2))
    T_a = np.zeros((3, D1))
    cdef double[:, :, ::1] out = out_a
    cdef double[:, ::1] den = den_a
    cdef double[:, :, ::1] S = S_a
    cdef double[:, ::1] T = T_a
    cdef Py_ssize_t g, i, j
    with nogil:
        for g in range(G):
            S[:, :, :] = 0.0
            T[:, :] = 0.0
            if causal:
                for i in range(N):
                    if i < M:
                        _add_key(S, T, kf, v, g, i, ck[i], sk[i])
                    _emit_query(S, T, qf, out, den, g, i, cq[i], sq[i], eps)
            else:
                for j in range(M):
                    _add_key(S, T, kf, v, g, j, ck[j], sk[j])
                for i in range(N):
                    _emit_query(S, T, qf, out, den, g, i, cq[i], sq[i], eps)
    return out_a, den_a


cdef inline void _query_grad(double[:, :, ::1] S, double[:, ::1] T,
                             const double[:, :, ::1] qf, const double[:, :, ::1] gout,
                             const double[:, :, ::1] out, const double[:, ::1] den,
                             double[:, :, ::1] gq, double[:, :, ::1] R, double[:, ::1] U,
                             Py_ssize_t g, Py_ssize_t i, double c, double s,
                             bint grad_q, bint feed_keys) noexcept nogil:
    """Gradient w.r.t. query i and (optionally) its contribution to key sums."""
    cdef Py_ssize_t D1 = qf.shape[2], D2 = out.shape[2], d, e
    cdef double dn = den[g, i], gden = 0.0, acc0, accc, accs, gn, q0
    for e in range(D2):
        gden -= gout[g, i, e] * out[g, i, e]
    gden /= dn
    for d in range(D1):
        q0 = qf[g, i, d]
        if grad_q:
            acc0 = T[0, d] * gden
            accc = T[1, d] * gden
            accs = T[2, d] * gden
            for e in range(D2):
                gn = gout[g, i, e] / dn
                acc0 += S[0, d, e] * gn
                accc += S[1, d, e] * gn
                accs += S[2, d, e] * gn
            gq[g, i, d] = acc0 + c * accc + s * accs
        if feed_keys:
            U[0, d] += q0 * gden
            U[1, d] += q0 * c * gden
            U[2, d] += q0 * s * gden
            for e in range(D2):
                gn = gout[g, i, e] / dn
                R[0, d, e] += q0 * gn
                R[1, d, e] += q0 * c * gn
                R[2, d, e] += q0 * s * gn


cdef inline void _key_grad(double[:, :, ::1] R, double[:, ::1] U,
                           const double[:, :, ::1] kf, const double[:, :, ::1] v,
                           double[:, :, ::1] gk, double[:, :, ::1] gv,
                           Py_ssize_t g, Py_ssize_t j, double c, double s) noexcept nogil:
    cdef Py_ssize_t D1 = kf.shape[2], D2 = v.shape[2], d, e
    cdef double a0, ac, as_, k0, vj
    for d in range(D1):
        a0 = U[0, d]
        ac = U[1, d]
        as_ = U[2, d]
        k0 = kf[g, j, d]
        for e in range(D2):
            vj = v[g, j, e]
            a0 += R[0, d, e] * vj
            ac += R[1, d, e] * vj
            as_ += R[2, d, e] * vj
            gv[g, j, e] += k0 * (R[0, d, e] + c * R[1, d, e] + s * R[2, d, e])
        gk[g, j, d] = a0 + c * ac + s * as_


def linear_backward(const double[:, :, ::1] gout, const double[:, :, ::1] qf,
                    const double[:, :, ::1] kf, const double[:, :, ::1] v,
                    const double[::1] cq, const double[::1] sq,
                    const double[::1] ck, const double[::1] sk, bint causal,
                    const double[:, :, ::1] out, const double[:, ::1] den):
    cdef Py_ssize_t G = qf.shape[0], N = qf.shape[1], D1 = qf.shape[2]
    cdef Py_ssize_t M = kf.shape[1], D2 = v.shape[2]
    gq_a = np.zeros((G, N, D1))
    gk_a = np.zeros((G, M, D1))
    gv_a = np.zeros((G, M, D2))
    S_a = np.zeros((3, D1, D2))
    T_a = np.zeros((3, D1))
    R_a = np.zeros((3, D1, D2))
    U_a = np.zeros((3, D1))
    cdef double[:, :, ::1] gq = gq_a
    cdef double[:, :, ::1] gk = gk_a
    cdef double[:, :, ::1] gv = gv_a
    cdef double[:, :, ::1] S = S_a
    cdef double[:, ::1] T = T_a
    cdef double[:, :, ::1] R = R_a
    cdef double[:, ::1] U = U_a
    cdef Py_ssize_t g, i, j, p, top
    with nogil:
        for g in range(G):
            S[:, :, :] = 0.0
            T[:, :] = 0.0
            R[:, :, :] = 0.0
            U[:, :] = 0.0
            if causal:
                for i in range(N):
                    if i < M:
                        _add_key(S, T, kf, v, g, i, ck[i], sk[i])
                    _query_grad(S, T, qf, gout, out, den, gq, R, U, g, i,
                                cq[i], sq[i], True, False)
                # suffix sweep: query p reaches keys 0..min(p, M-1)
                top = N if N > M else M
                p = top - 1
                while p >= 0:
                    if p < N:
                        _query_grad(S, T, qf, gout, out, den, gq, R, U, g, p,
                                    cq[p], sq[p], False, True)
                    if p < M:
                        _key_grad(R, U, kf, v, gk, gv, g, p, ck[p], sk[p])
                    p -= 1
            else:
                for j in range(M):
                    _add_key(S, T, kf, v, g, j, ck[j], sk[j])
                for i in range(N):
                    _query_grad(S, T, qf, gout, out, den, gq, R, U, g, i,
                                cq[i], sq[i], True, True)
                for j in range(M):
                    _key_grad(R, U, kf, v, gk, gv, g, j, ck[j], sk[j])
    return gq_a, gk_a, gv_a


cdef inline double _softmin(double a, double b, double c, double gamma) noexcept nogil:
    cdef double lo = a
    if b < lo:
        lo = b
    if c < lo:
        lo = c
    if lo == INFINITY:
        return INFINITY
    return lo - gamma * log(exp(-(a - lo) / gamma) + exp(-(b - lo) / gamma)
                            + exp(-(c - lo) / gamma))


def softdtw_forward(const double[::1] y, const double[::1] yhat, double gamma):
    cdef Py_ssize_t t1 = y.shape[0], t2 = yhat.shape[0], i, j
    r_a = np.full((t1 + 2, t2 + 2), np.inf)
    cdef double[:, ::1] r = r_a
    cdef double d
    r[0, 0] = 0.0
    with nogil:
        for i in range(1, t1 + 1):
            for j in range(1, t2 + 1):
                d = y[i - 1] - yhat[j - 1]
                r[i, j] = d * d + _softmin(r[i - 1, j], r[i, j - 1], r[i - 1, j - 1], gamma)
    return r_a


def softdtw_backward(const double[::1] y, const double[::1] yhat,
                     const double[:, ::1] r_in, double gamma):
    cdef Py_ssize_t t1 = y.shape[0], t2 = yhat.shape[0], i, j
    r_a = np.array(r_in, dtype=np.float64, copy=True)
    dist_a = np.zeros((t1 + 2, t2 + 2))
    e_a = np.zeros((t1 + 2, t2 + 2))
    cdef double[:, ::1] r = r_a
    cdef double[:, ::1] dist = dist_a
    cdef double[:, ::1] e = e_a
    cdef double a, b, c, diff
    with nogil:
        for i in range(t1):
            for j in range(t2):
                diff = y[i] - yhat[j]
                dist[i + 1, j + 1] = diff * diff
        for i in range(1, t1 + 1):
            r[i, t2 + 1] = -INFINITY
        for j in range(1, t2 + 1):
            r[t1 + 1, j] = -INFINITY
        r[t1 + 1, t2 + 1] = r[t1, t2]
        e[t1 + 1, t2 + 1] = 1.0
        j = t2
        while j >= 1:
            i = t1
            while i >= 1:
                a = exp((r[i + 1, j] - r[i, j] - dist[i + 1, j]) / gamma)
                b = exp((r[i, j + 1] - r[i, j] - dist[i, j + 1]) / gamma)
                c = exp((r[i + 1, j + 1] - r[i, j] - dist[i + 1, j + 1]) / gamma)
                e[i, j] = e[i + 1, j] * a + e[i, j + 1] * b + e[i + 1, j + 1] * c
                i -= 1
            j -= 1
    return e_a[1:t1 + 1, 1:t2 + 1].copy()
