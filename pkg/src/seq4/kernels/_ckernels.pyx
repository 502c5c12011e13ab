# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_numpy.py``.

Matrices arrive C-contiguous, so BLAS sees each one transposed.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh
from scipy.linalg.cython_blas cimport dgemv, dger

cnp.import_array()

BACKEND = "cython"


cdef inline double _sig(double z) nogil:
    cdef double e
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


cdef inline void _matvec(double[:, ::1] A, double* x, double* y, double beta) nogil:
    # y = A @ x + beta * y
    cdef int m = A.shape[0], n = A.shape[1], one = 1
    cdef double alpha = 1.0
    cdef char trans = b'T'
    if m == 0 or n == 0:
        return
    dgemv(&trans, &n, &m, &alpha, &A[0, 0], &n, x, &one, &beta, y, &one)


cdef inline void _matTvec(double[:, ::1] A, double* x, double* y, double beta) nogil:
    # y = A.T @ x + beta * y
    cdef int m = A.shape[0], n = A.shape[1], one = 1
    cdef double alpha = 1.0
    cdef char trans = b'N'
    if m == 0 or n == 0:
        return
    dgemv(&trans, &n, &m, &alpha, &A[0, 0], &n, x, &one, &beta, y, &one)


cdef inline void _outer_acc(double[:, ::1] G, double* a, double* b) nogil:
    # G += outer(a, b)
    cdef int m = G.shape[0], n = G.shape[1], one = 1
    cdef double alpha = 1.0
    if m == 0 or n == 0:
        return
    dger(&n, &m, &alpha, b, &one, a, &one, &G[0, 0], &n)


cdef void _cell(double[:, ::1] W_in, double[:, ::1] W_rec, double* b, double* x,
                double* h, double* c, double* z, double* h_new, double* c_new,
                double* tc, int H) nogil:
    cdef int k
    for k in range(4 * H):
        z[k] = b[k]
    _matvec(W_in, x, z, 1.0)
    _matvec(W_rec, h, z, 1.0)
    for k in range(3 * H):
        z[k] = _sig(z[k])
    for k in range(3 * H, 4 * H):
        z[k] = tanh(z[k])
    for k in range(H):
        c_new[k] = z[H + k] * c[k] + z[k] * z[3 * H + k]
        tc[k] = tanh(c_new[k])
        h_new[k] = z[2 * H + k] * tc[k]


cdef void _gate_grad(double* g, double* tc, double* c_prev, double* dh,
                     double* dc, double* dz, double* dc_prev, int H) nogil:
    cdef int k
    cdef double i, f, o, gg, dck
    for k in range(H):
        i = g[k]
        f = g[H + k]
        o = g[2 * H + k]
        gg = g[3 * H + k]
        dck = dc[k] + dh[k] * o * (1.0 - tc[k] * tc[k])
        dz[k] = dck * gg * i * (1.0 - i)
        dz[H + k] = dck * c_prev[k] * f * (1.0 - f)
        dz[2 * H + k] = dh[k] * tc[k] * o * (1.0 - o)
        dz[3 * H + k] = dck * i * (1.0 - gg * gg)
        dc_prev[k] = dck * f


def sigmoid(z):
    cdef double[::1] zv = np.ascontiguousarray(z, dtype=np.float64).ravel()
    out = np.empty(zv.shape[0])
    cdef double[::1] ov = out
    cdef Py_ssize_t k
    for k in range(zv.shape[0]):
        ov[k] = _sig(zv[k])
    return out.reshape(np.shape(z))


def lstm_cell_forward(double[:, ::1] W_in, double[:, ::1] W_rec, double[::1] b,
                      double[::1] x, double[::1] h, double[::1] c):
    cdef int H = h.shape[0]
    gates = np.empty(4 * H)
    h_new = np.empty(H)
    c_new = np.empty(H)
    tc = np.empty(H)
    cdef double[::1] gv = gates, hv = h_new, cv = c_new, tv = tc
    _cell(W_in, W_rec, &b[0], &x[0] if x.shape[0] else NULL, &h[0], &c[0],
          &gv[0], &hv[0], &cv[0], &tv[0], H)
    return h_new, c_new, gates, tc


def lstm_cell_backward(double[:, ::1] W_in, double[:, ::1] W_rec, double[::1] x,
                       double[::1] h, double[::1] c, double[::1] gates,
                       double[::1] tc, double[::1] dh, double[::1] dc):
    cdef int H = h.shape[0], D = x.shape[0]
    dz = np.empty(4 * H)
    dc_prev = np.empty(H)
    dx = np.zeros(D)
    dh_prev = np.zeros(H)
    dW_in = np.zeros((4 * H, D))
    dW_rec = np.zeros((4 * H, H))
    cdef double[::1] dzv = dz, dcv = dc_prev, dxv = dx, dhv = dh_prev
    cdef double[:, ::1] dWi = dW_in, dWr = dW_rec
    _gate_grad(&gates[0], &tc[0], &c[0], &dh[0], &dc[0], &dzv[0], &dcv[0], H)
    if D:
        _matTvec(W_in, &dzv[0], &dxv[0], 0.0)
        _outer_acc(dWi, &dzv[0], &x[0])
    _matTvec(W_rec, &dzv[0], &dhv[0], 0.0)
    _outer_acc(dWr, &dzv[0], &h[0])
    return dx, dh_prev, dc_prev, dW_in, dW_rec, dz


def lstm_seq_forward(double[:, ::1] W_in, double[:, ::1] W_rec, double[::1] b,
                     double[:, ::1] X, bint reverse):
    cdef int L = X.shape[0], H = W_rec.shape[1], D = X.shape[1]
    Hs = np.zeros((L, H))
    Cs = np.zeros((L, H))
    G = np.zeros((L, 4 * H))
    TC = np.zeros((L, H))
    zero = np.zeros(H)
    cdef double[:, ::1] Hv = Hs, Cv = Cs, Gv = G, Tv = TC
    cdef double[::1] zv = zero
    cdef double* hp
    cdef double* cp
    cdef int s, t, p
    for s in range(L):
        t = L - 1 - s if reverse else s
        p = t + 1 if reverse else t - 1
        if 0 <= p < L:
            hp = &Hv[p, 0]
            cp = &Cv[p, 0]
        else:
            hp = &zv[0]
            cp = &zv[0]
        _cell(W_in, W_rec, &b[0], &X[t, 0] if D else NULL, hp, cp,
              &Gv[t, 0], &Hv[t, 0], &Cv[t, 0], &Tv[t, 0], H)
    return Hs, Cs, G, TC


def lstm_seq_backward(double[:, ::1] W_in, double[:, ::1] W_rec, double[:, ::1] X,
                      double[:, ::1] Hs, double[:, ::1] Cs, double[:, ::1] G,
                      double[:, ::1] TC, double[:, ::1] dHs, bint reverse):
    cdef int L = X.shape[0], H = W_rec.shape[1], D = X.shape[1]
    dX = np.zeros((L, D))
    dW_in = np.zeros((4 * H, D))
    dW_rec = np.zeros((4 * H, H))
    db = np.zeros(4 * H)
    dz = np.empty(4 * H)
    dh = np.empty(H)
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    dc_tmp = np.empty(H)
    zero = np.zeros(H)
    cdef double[:, ::1] dXv = dX, dWi = dW_in, dWr = dW_rec
    cdef double[::1] dbv = db, dzv = dz, dhv = dh, dhn = dh_next, dcn = dc_next
    cdef double[::1] dct = dc_tmp, zv = zero
    cdef double* hp
    cdef double* cp
    cdef int s, t, p, k
    for s in range(L):
        t = s if reverse else L - 1 - s
        p = t + 1 if reverse else t - 1
        if 0 <= p < L:
            hp = &Hs[p, 0]
            cp = &Cs[p, 0]
        else:
            hp = &zv[0]
            cp = &zv[0]
        for k in range(H):
            dhv[k] = dHs[t, k] + dhn[k]
        _gate_grad(&G[t, 0], &TC[t, 0], cp, &dhv[0], &dcn[0], &dzv[0], &dct[0], H)
        for k in range(H):
            dcn[k] = dct[k]
        for k in range(4 * H):
            dbv[k] += dzv[k]
        _matTvec(W_rec, &dzv[0], &dhn[0], 0.0)
        _outer_acc(dWr, &dzv[0], hp)
        if D:
            _matTvec(W_in, &dzv[0], &dXv[t, 0], 0.0)
            _outer_acc(dWi, &dzv[0], &X[t, 0])
    return dX, dW_in, dW_rec, db


def attention_forward(double[:, ::1] W_q, double[:, ::1] keys_proj, double[::1] v,
                      double[:, ::1] keys, double[::1] q):
    cdef int L = keys.shape[0], A = v.shape[0], K = keys.shape[1]
    qp = np.empty(A)
    t = np.empty((L, A))
    w = np.empty(L)
    ctx = np.zeros(K)
    cdef double[::1] qpv = qp, wv = w, cv = ctx
    cdef double[:, ::1] tv = t
    cdef int j, a, k
    cdef double s, m = -1e308, tot = 0.0
    _matvec(W_q, &q[0], &qpv[0], 0.0)
    for j in range(L):
        s = 0.0
        for a in range(A):
            tv[j, a] = tanh(keys_proj[j, a] + qpv[a])
            s += tv[j, a] * v[a]
        wv[j] = s
        if s > m:
            m = s
    for j in range(L):
        wv[j] = exp(wv[j] - m)
        tot += wv[j]
    for j in range(L):
        wv[j] /= tot
        for k in range(K):
            cv[k] += wv[j] * keys[j, k]
    return ctx, w, t


def attention_backward(double[:, ::1] W_q, double[::1] v, double[:, ::1] keys,
                       double[::1] q, double[::1] w, double[:, ::1] t,
                       double[::1] dctx):
    cdef int L = keys.shape[0], A = v.shape[0], K = keys.shape[1], H = q.shape[0]
    dq = np.empty(H)
    dW_q = np.zeros((A, H))
    dkp = np.empty((L, A))
    dv = np.zeros(A)
    dkeys = np.empty((L, K))
    dqp = np.zeros(A)
    ds = np.empty(L)
    cdef double[::1] dqv = dq, dvv = dv, dqpv = dqp, dsv = ds
    cdef double[:, ::1] dWq = dW_q, dkpv = dkp, dkv = dkeys
    cdef int j, a, k
    cdef double dw, mean = 0.0
    for j in range(L):
        dw = 0.0
        for k in range(K):
            dw += keys[j, k] * dctx[k]
            dkv[j, k] = w[j] * dctx[k]
        dsv[j] = dw
        mean += w[j] * dw
    for j in range(L):
        dsv[j] = w[j] * (dsv[j] - mean)
        for a in range(A):
            dvv[a] += t[j, a] * dsv[j]
            dkpv[j, a] = dsv[j] * v[a] * (1.0 - t[j, a] * t[j, a])
            dqpv[a] += dkpv[j, a]
    _outer_acc(dWq, &dqpv[0], &q[0])
    _matTvec(W_q, &dqpv[0], &dqv[0], 0.0)
    return dq, dW_q, dkp, dv, dkeys
