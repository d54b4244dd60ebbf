# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.  Mirrors ``_kernels_py`` signature for signature."""
import numpy as np

from libc.math cimport exp
from scipy.linalg.cython_blas cimport dgemm

N_STATES = 8


cdef inline void _mm(bint ta, bint tb, int m, int n, int k, double alpha,
                     double* A, int lda, double* B, int ldb,
                     double beta, double* C, int ldc) noexcept nogil:
    # row-major C = alpha*op(A)@op(B) + beta*C, via column-major C^T = op(B)^T op(A)^T
    cdef char ca = b'T' if tb else b'N'
    cdef char cb = b'T' if ta else b'N'
    dgemm(&ca, &cb, &n, &m, &k, &alpha, B, &ldb, A, &lda, &beta, C, &ldc)


cdef inline double _sigmoid(double z) noexcept nogil:
    cdef double e
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


cdef inline double _tanh(double z) noexcept nogil:
    # 2*sigmoid(2z) - 1, one exp instead of a libm tanh
    cdef double e
    if z >= 0.0:
        return 2.0 / (1.0 + exp(-2.0 * z)) - 1.0
    e = exp(2.0 * z)
    return (e - 1.0) / (e + 1.0)


def hourly_counts(minutes, states, corrupted):
    cdef const long long[::1] mv = np.ascontiguousarray(minutes, dtype=np.int64)
    cdef const signed char[::1] sv = np.ascontiguousarray(states, dtype=np.int8)
    cdef const unsigned char[::1] cv = np.ascontiguousarray(corrupted, dtype=np.uint8)
    cdef Py_ssize_t n = mv.shape[0], i, k = 0
    cdef long long h, prev
    if n == 0:
        return (np.empty(0, np.int64), np.zeros((0, N_STATES), np.int32),
                np.zeros(0, np.int32), np.zeros(0, np.uint8))
    # upper bound on distinct hours is n
    hours_a = np.empty(n, np.int64)
    counts_a = np.zeros((n, N_STATES), np.int32)
    nrec_a = np.zeros(n, np.int32)
    dest_a = np.zeros(n, np.uint8)
    cdef long long[::1] hours = hours_a
    cdef int[:, ::1] counts = counts_a
    cdef int[::1] nrec = nrec_a
    cdef unsigned char[::1] dest = dest_a
    cdef signed char s
    with nogil:
        prev = mv[0] // 60
        hours[0] = prev
        for i in range(n):
            h = mv[i] // 60
            if h != prev:
                k += 1
                hours[k] = h
                prev = h
            nrec[k] += 1
            s = sv[i]
            if s >= 0:
                counts[k, s] += 1
            if cv[i]:
                dest[k] = 1
    k += 1
    return hours_a[:k].copy(), counts_a[:k].copy(), nrec_a[:k].copy(), dest_a[:k].copy()


def fir_apply(x, taps):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] tv = np.ascontiguousarray(taps, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], L = tv.shape[0], c = (L - 1) // 2
    cdef Py_ssize_t t, k, j
    out_a = np.empty(n, np.float64)
    cdef double[::1] out = out_a
    cdef double acc
    with nogil:
        for t in range(n):
            acc = 0.0
            for k in range(L):
                j = t + k - c
                if j < 0:
                    j = 0
                elif j > n - 1:
                    j = n - 1
                acc = acc + tv[k] * xv[j]
            out[t] = acc
    return out_a


def gauss_eval_jac(params, x, bint want_jac=True):
    cdef const double[::1] p = np.ascontiguousarray(params, dtype=np.float64)
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t m = xv.shape[0], nt = p.shape[0] // 3, i, j
    f_a = np.zeros(m, np.float64)
    cdef double[::1] f = f_a
    jac_a = np.empty((m, 3 * nt), np.float64) if want_jac else None
    cdef double[:, ::1] jac
    if want_jac:
        jac = jac_a
    cdef double a, b, c, u, e, acc
    for i in range(m):
        acc = 0.0
        for j in range(nt):
            a = p[3 * j]
            b = p[3 * j + 1]
            c = p[3 * j + 2]
            u = (xv[i] - b) / c
            e = exp(-u * u)
            acc = acc + a * e
            if want_jac:
                jac[i, 3 * j] = e
                jac[i, 3 * j + 1] = a * e * 2.0 * u / c
                jac[i, 3 * j + 2] = a * e * 2.0 * u * u / c
        f[i] = acc
    return f_a, jac_a


def lstm_forward(X, W, U, b):
    cdef const double[:, :, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] Wv = np.ascontiguousarray(W, dtype=np.float64)
    cdef const double[:, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef int T = Xv.shape[0], B = Xv.shape[1], D = Xv.shape[2], H = Uv.shape[0]
    cdef int G4 = 4 * H
    Hs_a = np.zeros((T + 1, B, H))
    Cs_a = np.zeros((T + 1, B, H))
    G_a = np.empty((T, B, G4))
    TC_a = np.empty((T, B, H))
    cdef double[:, :, ::1] Hs = Hs_a
    cdef double[:, :, ::1] Cs = Cs_a
    cdef double[:, :, ::1] G = G_a
    cdef double[:, :, ::1] TC = TC_a
    cdef int t, r, j
    cdef double gi, gf, gg, go, c, tc
    with nogil:
        for t in range(T):
            for r in range(B):
                for j in range(G4):
                    G[t, r, j] = bv[j]
        _mm(False, False, T * B, G4, D, 1.0, <double*>&Xv[0, 0, 0], D, <double*>&Wv[0, 0], G4, 1.0, &G[0, 0, 0], G4)
        for t in range(T):
            _mm(False, False, B, G4, H, 1.0, &Hs[t, 0, 0], H, <double*>&Uv[0, 0], G4, 1.0, &G[t, 0, 0], G4)
            for r in range(B):
                for j in range(H):
                    gi = _sigmoid(G[t, r, j])
                    gf = _sigmoid(G[t, r, H + j])
                    gg = _tanh(G[t, r, 2 * H + j])
                    go = _sigmoid(G[t, r, 3 * H + j])
                    G[t, r, j] = gi
                    G[t, r, H + j] = gf
                    G[t, r, 2 * H + j] = gg
                    G[t, r, 3 * H + j] = go
                    c = gf * Cs[t, r, j] + gi * gg
                    Cs[t + 1, r, j] = c
                    tc = _tanh(c)
                    TC[t, r, j] = tc
                    Hs[t + 1, r, j] = go * tc
    return Hs_a, Cs_a, G_a, TC_a


def lstm_backward(X, W, U, Hs, Cs, G, TC, dH):
    cdef const double[:, :, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] Wv = np.ascontiguousarray(W, dtype=np.float64)
    cdef const double[:, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef const double[:, :, ::1] Hv = np.ascontiguousarray(Hs, dtype=np.float64)
    cdef const double[:, :, ::1] Cv = np.ascontiguousarray(Cs, dtype=np.float64)
    cdef const double[:, :, ::1] Gv = np.ascontiguousarray(G, dtype=np.float64)
    cdef const double[:, :, ::1] TCv = np.ascontiguousarray(TC, dtype=np.float64)
    cdef const double[:, :, ::1] dHv = np.ascontiguousarray(dH, dtype=np.float64)
    cdef int T = Xv.shape[0], B = Xv.shape[1], D = Xv.shape[2], H = Uv.shape[0]
    cdef int G4 = 4 * H
    dZ_a = np.empty((T, B, G4))
    dU_a = np.zeros((H, G4))
    dW_a = np.empty((D, G4))
    db_a = np.zeros(G4)
    dX_a = np.empty((T, B, D))
    dh_a = np.zeros((B, H))
    dc_a = np.zeros((B, H))
    cdef double[:, :, ::1] dZ = dZ_a
    cdef double[:, ::1] dU = dU_a
    cdef double[:, ::1] dW = dW_a
    cdef double[::1] db = db_a
    cdef double[:, :, ::1] dX = dX_a
    cdef double[:, ::1] dh_next = dh_a
    cdef double[:, ::1] dc_next = dc_a
    cdef int t, r, j
    cdef double gi, gf, gg, go, tc, dh, dc
    with nogil:
        for t in range(T - 1, -1, -1):
            for r in range(B):
                for j in range(H):
                    gi = Gv[t, r, j]
                    gf = Gv[t, r, H + j]
                    gg = Gv[t, r, 2 * H + j]
                    go = Gv[t, r, 3 * H + j]
                    tc = TCv[t, r, j]
                    dh = dHv[t, r, j] + dh_next[r, j]
                    dc = dh * go * (1.0 - tc * tc) + dc_next[r, j]
                    dZ[t, r, j] = dc * gg * gi * (1.0 - gi)
                    dZ[t, r, H + j] = dc * Cv[t, r, j] * gf * (1.0 - gf)
                    dZ[t, r, 2 * H + j] = dc * gi * (1.0 - gg * gg)
                    dZ[t, r, 3 * H + j] = dh * tc * go * (1.0 - go)
                    dc_next[r, j] = dc * gf
            _mm(False, True, B, H, G4, 1.0, &dZ[t, 0, 0], G4, <double*>&Uv[0, 0], G4, 0.0, &dh_next[0, 0], H)
            _mm(True, False, H, G4, B, 1.0, <double*>&Hv[t, 0, 0], H, &dZ[t, 0, 0], G4, 1.0, &dU[0, 0], G4)
        _mm(True, False, D, G4, T * B, 1.0, <double*>&Xv[0, 0, 0], D, &dZ[0, 0, 0], G4, 0.0, &dW[0, 0], G4)
        _mm(False, True, T * B, D, G4, 1.0, &dZ[0, 0, 0], G4, <double*>&Wv[0, 0], G4, 0.0, &dX[0, 0, 0], D)
        for t in range(T):
            for r in range(B):
                for j in range(G4):
                    db[j] += dZ[t, r, j]
    return dX_a, dW_a, dU_a, db_a
