# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled minibatch loss/gradient kernels.

Same contract as ``fedamd._kernels_py``. Loops run without the GIL so
per-client work can overlap across threads.
"""

import numpy as np

from libc.math cimport exp, log
from libc.stdint cimport int64_t

BACKEND = "compiled"


cdef double _xent_row(const double* z, double* r, Py_ssize_t C, int64_t label,
                      double inv_b) noexcept nogil:
    # z: logits for one sample; r receives (softmax - onehot) * inv_b
    cdef Py_ssize_t c
    cdef double m = z[0], s = 0.0, lse
    for c in range(1, C):
        if z[c] > m:
            m = z[c]
    for c in range(C):
        s += exp(z[c] - m)
    lse = log(s)
    if r != NULL:
        for c in range(C):
            r[c] = exp(z[c] - m - lse) * inv_b
        r[label] -= inv_b
    return lse + m - z[label]


cdef double _softmax(const double[::1] x, const double[:, ::1] X, const int64_t[::1] y,
                     Py_ssize_t C, double[::1] z, double[::1] r, double[::1] g,
                     bint need_grad) noexcept nogil:
    cdef Py_ssize_t B = X.shape[0], n_in = X.shape[1]
    cdef Py_ssize_t i, c, j, split = C * n_in
    cdef double total = 0.0, acc, rc, inv_b = 1.0 / B
    if need_grad:
        for j in range(g.shape[0]):
            g[j] = 0.0
    for i in range(B):
        for c in range(C):
            acc = x[split + c]
            for j in range(n_in):
                acc = acc + x[c * n_in + j] * X[i, j]
            z[c] = acc
        if need_grad:
            total += _xent_row(&z[0], &r[0], C, y[i], inv_b)
            for c in range(C):
                rc = r[c]
                for j in range(n_in):
                    g[c * n_in + j] += rc * X[i, j]
                g[split + c] += rc
        else:
            total += _xent_row(&z[0], NULL, C, y[i], inv_b)
    return total * inv_b


def softmax_loss_grad(x, X, y, Py_ssize_t classes, bint need_grad=True):
    cdef const double[::1] xv = x
    cdef const double[:, ::1] Xv = X
    cdef const int64_t[::1] yv = y
    cdef double[::1] z = np.empty(classes)
    cdef double[::1] r = np.empty(classes)
    grad = np.zeros_like(x) if need_grad else np.zeros(1)
    cdef double[::1] gv = grad
    cdef double loss
    with nogil:
        loss = _softmax(xv, Xv, yv, classes, z, r, gv, need_grad)
    return loss, (grad if need_grad else None)


cdef double _mlp2(const double[::1] x, const double[:, ::1] X, const int64_t[::1] y,
                  Py_ssize_t C, Py_ssize_t H, double[::1] pre, double[::1] act,
                  double[::1] dh, double[::1] z, double[::1] r, double[::1] g,
                  bint need_grad) noexcept nogil:
    cdef Py_ssize_t B = X.shape[0], n_in = X.shape[1]
    cdef Py_ssize_t o_b1 = H * n_in, o_w2 = o_b1 + H, o_b2 = o_w2 + C * H
    cdef Py_ssize_t i, c, h, j
    cdef double total = 0.0, acc, rc, dv, inv_b = 1.0 / B
    if need_grad:
        for j in range(g.shape[0]):
            g[j] = 0.0
    for i in range(B):
        for h in range(H):
            acc = x[o_b1 + h]
            for j in range(n_in):
                acc = acc + x[h * n_in + j] * X[i, j]
            pre[h] = acc
            act[h] = acc if acc > 0.0 else 0.0
        for c in range(C):
            acc = x[o_b2 + c]
            for h in range(H):
                acc = acc + x[o_w2 + c * H + h] * act[h]
            z[c] = acc
        if not need_grad:
            total += _xent_row(&z[0], NULL, C, y[i], inv_b)
            continue
        total += _xent_row(&z[0], &r[0], C, y[i], inv_b)
        for h in range(H):
            dh[h] = 0.0
        for c in range(C):
            rc = r[c]
            for h in range(H):
                g[o_w2 + c * H + h] += rc * act[h]
                dh[h] += rc * x[o_w2 + c * H + h]
            g[o_b2 + c] += rc
        for h in range(H):
            if pre[h] > 0.0:
                dv = dh[h]
                for j in range(n_in):
                    g[h * n_in + j] += dv * X[i, j]
                g[o_b1 + h] += dv
    return total * inv_b


def mlp2_loss_grad(x, X, y, Py_ssize_t classes, Py_ssize_t hidden, bint need_grad=True):
    cdef const double[::1] xv = x
    cdef const double[:, ::1] Xv = X
    cdef const int64_t[::1] yv = y
    cdef double[::1] pre = np.empty(hidden)
    cdef double[::1] act = np.empty(hidden)
    cdef double[::1] dh = np.empty(hidden)
    cdef double[::1] z = np.empty(classes)
    cdef double[::1] r = np.empty(classes)
    grad = np.zeros_like(x) if need_grad else np.zeros(1)
    cdef double[::1] gv = grad
    cdef double loss
    with nogil:
        loss = _mlp2(xv, Xv, yv, classes, hidden, pre, act, dh, z, r, gv, need_grad)
    return loss, (grad if need_grad else None)
