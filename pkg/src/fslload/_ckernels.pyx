# cython: language_level=3
"""Compiled hot kernels; API identical to ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline void _mm(bint ta, bint tb, int M, int N, int K, double alpha,
                     double* A, int lda, double* B, int ldb,
                     double beta, double* C, int ldc) noexcept nogil:
    # row-major C = alpha op(A) op(B) + beta C, via column-major C^T = op(B)^T op(A)^T
    cdef char ca = b'T' if ta else b'N'
    cdef char cb = b'T' if tb else b'N'
    dgemm(&cb, &ca, &N, &M, &K, &alpha, B, &ldb, A, &lda, &beta, C, &ldc)


def sampen_counts(x, int m, double r):
    cdef const double[::1] v = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n_t = v.shape[0] - m
    cdef Py_ssize_t i, j, k
    cdef long nm = 0, nm1 = 0
    cdef double dmax, dd
    if n_t < 2:
        return 0, 0
    with nogil:
        for i in range(n_t - 1):
            for j in range(i + 1, n_t):
                dmax = 0.0
                for k in range(m):
                    dd = fabs(v[i + k] - v[j + k])
                    if dd > dmax:
                        dmax = dd
                        if dmax >= r:
                            break
                if dmax < r:
                    nm += 1
                    if fabs(v[i + m] - v[j + m]) < r:
                        nm1 += 1
    return int(nm), int(nm1)


def average_linkage(dist, Py_ssize_t k):
    cdef double[:, ::1] d = np.array(dist, dtype=np.float64, order="C")
    cdef Py_ssize_t n = d.shape[0]
    cdef double[::1] sizes = np.ones(n)
    cdef cnp.intp_t[::1] owner = np.arange(n, dtype=np.intp)
    cdef unsigned char[::1] active = np.ones(n, dtype=np.uint8)
    cdef Py_ssize_t step, i, j, a = 0, b = 0, l
    cdef double best, na, nb, val
    with nogil:
        for step in range(n - k):
            best = 1e308 * 10.0
            for i in range(n):
                if not active[i]:
                    continue
                for j in range(i + 1, n):
                    if active[j] and d[i, j] < best:
                        best = d[i, j]
                        a = i
                        b = j
            na = sizes[a]
            nb = sizes[b]
            for l in range(n):
                val = (na * d[a, l] + nb * d[b, l]) / (na + nb)
                d[a, l] = val
                d[l, a] = val
            d[a, a] = 0.0
            sizes[a] = na + nb
            active[b] = 0
            for l in range(n):
                if owner[l] == b:
                    owner[l] = a
    return np.asarray(owner)


cdef _forward(const double[::1] wx, const double[:, ::1] wh, const double[::1] bias,
              const double[::1] wy, double by,
              const double[:, ::1] X, gates_arr, cs_arr, hs_arr, tcs_arr, double[::1] pred):
    # transcendental work goes through numpy's SIMD tanh; everything else stays in C
    cdef double[:, :, ::1] gates = gates_arr, cs = cs_arr, hs = hs_arr, tcs = tcs_arr
    cdef Py_ssize_t B = X.shape[0], T = X.shape[1], H = wy.shape[0]
    cdef Py_ssize_t t, s, u
    cdef double xt, c
    for t in range(T):
        with nogil:
            _mm(False, True, <int>B, <int>(4 * H), <int>H, 1.0,
                &hs[t, 0, 0], <int>H, &wh[0, 0], <int>H, 0.0, &gates[t, 0, 0], <int>(4 * H))
            for s in range(B):
                xt = X[s, t]
                for u in range(4 * H):
                    c = gates[t, s, u] + (xt * wx[u] + bias[u])
                    if u < 2 * H or u >= 3 * H:
                        c = 0.5 * c
                    gates[t, s, u] = c
        np.tanh(gates_arr[t], out=gates_arr[t])
        with nogil:
            for s in range(B):
                for u in range(2 * H):
                    gates[t, s, u] = 0.5 * (gates[t, s, u] + 1.0)
                for u in range(3 * H, 4 * H):
                    gates[t, s, u] = 0.5 * (gates[t, s, u] + 1.0)
                for u in range(H):
                    cs[t + 1, s, u] = gates[t, s, H + u] * cs[t, s, u] + gates[t, s, u] * gates[t, s, 2 * H + u]
        np.tanh(cs_arr[t + 1], out=tcs_arr[t])
        with nogil:
            for s in range(B):
                for u in range(H):
                    hs[t + 1, s, u] = gates[t, s, 3 * H + u] * tcs[t, s, u]
    with nogil:
        for s in range(B):
            c = by
            for u in range(H):
                c = c + hs[T, s, u] * wy[u]
            pred[s] = c


def _alloc(Py_ssize_t B, Py_ssize_t T, Py_ssize_t H):
    return (np.empty((T, B, 4 * H)), np.zeros((T + 1, B, H)),
            np.zeros((T + 1, B, H)), np.empty((T, B, H)), np.empty(B))


def lstm_predict(wx, wh, b, wy, double by, X):
    Xc = np.ascontiguousarray(X, dtype=np.float64)
    B, T = Xc.shape
    H = np.asarray(wy).shape[0]
    gates, cs, hs, tcs, pred = _alloc(B, T, H)
    _forward(np.ascontiguousarray(wx, dtype=np.float64), np.ascontiguousarray(wh, dtype=np.float64),
             np.ascontiguousarray(b, dtype=np.float64), np.ascontiguousarray(wy, dtype=np.float64),
             by, Xc, gates, cs, hs, tcs, pred)
    return pred


def lstm_loss_grad(wx, wh, b, wy, double by, X, y):
    cdef const double[:, ::1] Xc = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] yc = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] wxc = np.ascontiguousarray(wx, dtype=np.float64)
    cdef const double[:, ::1] whc = np.ascontiguousarray(wh, dtype=np.float64)
    cdef const double[::1] bc = np.ascontiguousarray(b, dtype=np.float64)
    cdef const double[::1] wyc = np.ascontiguousarray(wy, dtype=np.float64)
    cdef Py_ssize_t B = Xc.shape[0], T = Xc.shape[1], H = wyc.shape[0]
    g_, c_, h_, tc_, p_ = _alloc(B, T, H)
    cdef double[:, :, ::1] gates = g_, cs = c_, hs = h_, tcs = tc_
    cdef double[::1] pred = p_
    _forward(wxc, whc, bc, wyc, by, Xc, g_, c_, h_, tc_, pred)

    dwx_ = np.zeros(4 * H)
    dwh_ = np.zeros((4 * H, H))
    db_ = np.zeros(4 * H)
    dwy_ = np.zeros(H)
    cdef double[::1] dwx = dwx_, db = db_, dwy = dwy_
    cdef double[:, ::1] dwh = dwh_
    cdef double[:, ::1] dz = np.empty((B, 4 * H))
    cdef double[:, ::1] dh = np.empty((B, H))
    cdef double[:, ::1] dc = np.zeros((B, H))
    cdef double[::1] dpred = np.empty(B)
    cdef double loss = 0.0, dby = 0.0, e, ig, fg, gg, og, tc, dcu, xt
    cdef Py_ssize_t t, s, u
    with nogil:
        for s in range(B):
            e = pred[s] - yc[s]
            loss += e * e
            dpred[s] = 2.0 * e / B
            dby += dpred[s]
        loss /= B
        for s in range(B):
            for u in range(H):
                dwy[u] += hs[T, s, u] * dpred[s]
                dh[s, u] = dpred[s] * wyc[u]
        for t in range(T - 1, -1, -1):
            for s in range(B):
                xt = Xc[s, t]
                for u in range(H):
                    ig = gates[t, s, u]
                    fg = gates[t, s, H + u]
                    gg = gates[t, s, 2 * H + u]
                    og = gates[t, s, 3 * H + u]
                    tc = tcs[t, s, u]
                    dcu = dc[s, u] + dh[s, u] * og * (1.0 - tc * tc)
                    dz[s, u] = dcu * gg * ig * (1.0 - ig)
                    dz[s, H + u] = dcu * cs[t, s, u] * fg * (1.0 - fg)
                    dz[s, 2 * H + u] = dcu * ig * (1.0 - gg * gg)
                    dz[s, 3 * H + u] = dh[s, u] * tc * og * (1.0 - og)
                    dc[s, u] = dcu * fg
                for u in range(4 * H):
                    dwx[u] += dz[s, u] * xt
                    db[u] += dz[s, u]
            # dwh += dz^T h_{t-1};  dh = dz wh
            _mm(True, False, <int>(4 * H), <int>H, <int>B, 1.0,
                &dz[0, 0], <int>(4 * H), &hs[t, 0, 0], <int>H, 1.0, &dwh[0, 0], <int>H)
            _mm(False, False, <int>B, <int>H, <int>(4 * H), 1.0,
                &dz[0, 0], <int>(4 * H), &whc[0, 0], <int>H, 0.0, &dh[0, 0], <int>H)
    return float(loss), dwx_, dwh_, db_, dwy_, float(dby)
