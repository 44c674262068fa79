# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-example gradient kernels.

Same contract and parameter layout as ``_kernels_py``. Each example's
gradient is produced by one shared routine, so ``example_grads`` rows and
the terms accumulated by ``clipped_grad_sum`` are bitwise identical.
"""

import numpy as np

from libc.math cimport exp, log, log1p, sqrt, isinf, nextafter


cdef double _one_example(
    const double[::1] theta,
    const double[:, ::1] X,
    Py_ssize_t i,
    Py_ssize_t label,
    Py_ssize_t d_in,
    Py_ssize_t H,
    Py_ssize_t K,
    double[::1] g,
    double[::1] pre,
    double[::1] s,
) noexcept nogil:
    """Write the gradient of example i into g and return its loss."""
    cdef Py_ssize_t j, h, k, o_b1, o_w2, o_b2
    cdef double acc, m, z, loss, e, other

    if H == 0:
        for k in range(K):
            acc = 0.0
            for j in range(d_in):
                acc = acc + theta[k * d_in + j] * X[i, j]
            s[k] = acc + theta[K * d_in + k]
    else:
        o_b1 = H * d_in
        o_w2 = o_b1 + H
        o_b2 = o_w2 + K * H
        for h in range(H):
            acc = 0.0
            for j in range(d_in):
                acc = acc + theta[h * d_in + j] * X[i, j]
            pre[h] = acc + theta[o_b1 + h]
        for k in range(K):
            acc = 0.0
            for h in range(H):
                if pre[h] > 0.0:
                    acc = acc + theta[o_w2 + k * H + h] * pre[h]
            s[k] = acc + theta[o_b2 + k]

    m = s[0]
    for k in range(1, K):
        if s[k] > m:
            m = s[k]
    z = 0.0
    other = 0.0
    for k in range(K):
        e = exp(s[k] - m)
        z = z + e
        if k != label:
            other = other + e
    if s[label] == m:
        loss = log1p(other)
    else:
        loss = log(z) - (s[label] - m)
    # s now holds dloss/dscores = softmax - onehot; the label entry uses
    # -other / z so it keeps relative precision as p_y -> 1
    for k in range(K):
        s[k] = exp(s[k] - m) / z
    s[label] = -other / z

    if H == 0:
        for k in range(K):
            for j in range(d_in):
                g[k * d_in + j] = s[k] * X[i, j]
            g[K * d_in + k] = s[k]
        return loss

    for k in range(K):
        for h in range(H):
            g[o_w2 + k * H + h] = s[k] * pre[h] if pre[h] > 0.0 else 0.0
        g[o_b2 + k] = s[k]
    for h in range(H):
        if pre[h] > 0.0:
            acc = 0.0
            for k in range(K):
                acc = acc + theta[o_w2 + k * H + h] * s[k]
        else:
            acc = 0.0
        g[o_b1 + h] = acc
        for j in range(d_in):
            g[h * d_in + j] = acc * X[i, j]
    return loss


def _dims(Py_ssize_t d_in, Py_ssize_t hidden, Py_ssize_t num_classes):
    if hidden == 0:
        return num_classes * d_in + num_classes
    return hidden * d_in + hidden + num_classes * hidden + num_classes


def example_grads(theta, X, y, Py_ssize_t d_in, Py_ssize_t hidden, Py_ssize_t num_classes):
    cdef const double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const double[:, ::1] xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const Py_ssize_t[::1] yv = np.ascontiguousarray(y, dtype=np.intp)
    cdef Py_ssize_t n = xv.shape[0], d = _dims(d_in, hidden, num_classes), i
    G = np.empty((n, d), dtype=np.float64)
    losses = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] gv = G
    cdef double[::1] lv = losses
    cdef double[::1] pre = np.empty(max(hidden, 1))
    cdef double[::1] s = np.empty(num_classes)
    with nogil:
        for i in range(n):
            lv[i] = _one_example(th, xv, i, yv[i], d_in, hidden, num_classes, gv[i], pre, s)
    return G, losses


def clipped_grad_sum(theta, X, y, Py_ssize_t d_in, Py_ssize_t hidden, Py_ssize_t num_classes, double clip):
    cdef const double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const double[:, ::1] xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const Py_ssize_t[::1] yv = np.ascontiguousarray(y, dtype=np.intp)
    cdef Py_ssize_t n = xv.shape[0], d = _dims(d_in, hidden, num_classes), i, j
    total = np.zeros(d, dtype=np.float64)
    cdef double[::1] tv = total
    cdef double[::1] g = np.empty(d)
    cdef double[::1] pre = np.empty(max(hidden, 1))
    cdef double[::1] s = np.empty(num_classes)
    cdef double loss_sum = 0.0, max_norm = 0.0, sq, norm, scale, post
    cdef bint no_clip = isinf(clip)
    with nogil:
        for i in range(n):
            loss_sum = loss_sum + _one_example(th, xv, i, yv[i], d_in, hidden, num_classes, g, pre, s)
            sq = 0.0
            for j in range(d):
                sq = sq + g[j] * g[j]
            norm = sqrt(sq)
            scale = 1.0
            post = norm
            if not no_clip and norm > clip:
                scale = clip / norm
                while True:
                    sq = 0.0
                    for j in range(d):
                        sq = sq + (g[j] * scale) * (g[j] * scale)
                    post = sqrt(sq)
                    if post <= clip:
                        break
                    scale = nextafter(scale, 0.0)
            if post > max_norm:
                max_norm = post
            if i == 0:
                for j in range(d):
                    tv[j] = g[j] * scale
            else:
                for j in range(d):
                    tv[j] = tv[j] + g[j] * scale
    return total, max_norm, loss_sum
