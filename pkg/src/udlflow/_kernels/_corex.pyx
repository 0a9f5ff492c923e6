# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled verifier kernels.

Same contract as _fallback: interval and point propagation through a
stack of dense affine(+ReLU) layers. Written as plain loops because the
layers are tiny (tens of units); BLAS dispatch overhead costs more than
the arithmetic at that size.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def stack_interval(list wpos, list wneg, list biases, list relu_flags,
                   object lo0, object hi0):
    cdef cnp.ndarray[double, ndim=1] lo = np.ascontiguousarray(lo0, dtype=np.float64).copy()
    cdef cnp.ndarray[double, ndim=1] hi = np.ascontiguousarray(hi0, dtype=np.float64).copy()
    cdef cnp.ndarray[double, ndim=1] nlo, nhi
    cdef double[:, ::1] wp, wn
    cdef double[::1] b, lov, hiv, nlov, nhiv
    cdef Py_ssize_t i, r, c, m, n
    cdef double sl, sh
    cdef bint apply_relu
    for i in range(len(wpos)):
        wp = wpos[i]
        wn = wneg[i]
        b = biases[i]
        apply_relu = relu_flags[i]
        m = wp.shape[0]
        n = wp.shape[1]
        nlo = np.empty(m, dtype=np.float64)
        nhi = np.empty(m, dtype=np.float64)
        nlov = nlo
        nhiv = nhi
        lov = lo
        hiv = hi
        for r in range(m):
            sl = b[r]
            sh = b[r]
            for c in range(n):
                sl += wp[r, c] * lov[c] + wn[r, c] * hiv[c]
                sh += wp[r, c] * hiv[c] + wn[r, c] * lov[c]
            if apply_relu:
                if sl < 0.0:
                    sl = 0.0
                if sh < 0.0:
                    sh = 0.0
            nlov[r] = sl
            nhiv[r] = sh
        lo = nlo
        hi = nhi
    return lo, hi


def stack_points(list weights, list biases, list relu_flags, object x0):
    """Batched exact forward pass; rows of x0 are independent inputs."""
    cdef cnp.ndarray[double, ndim=2] y = np.ascontiguousarray(x0, dtype=np.float64).copy()
    cdef cnp.ndarray[double, ndim=2] ny
    cdef double[:, ::1] w, yv, nyv
    cdef double[::1] b
    cdef Py_ssize_t i, p, r, c, m, n, rows
    cdef double s
    cdef bint apply_relu
    rows = y.shape[0]
    for i in range(len(weights)):
        w = weights[i]
        b = biases[i]
        apply_relu = relu_flags[i]
        m = w.shape[0]
        n = w.shape[1]
        ny = np.empty((rows, m), dtype=np.float64)
        nyv = ny
        yv = y
        for p in range(rows):
            for r in range(m):
                s = b[r]
                for c in range(n):
                    s += w[r, c] * yv[p, c]
                if apply_relu and s < 0.0:
                    s = 0.0
                nyv[p, r] = s
        y = ny
    return y


def stack_margins(list weights, list biases, list relu_flags, object x0,
                  Py_ssize_t target):
    """Forward pass plus argmax margin y_target - max(other logits)."""
    cdef cnp.ndarray[double, ndim=2] y = stack_points(weights, biases,
                                                      relu_flags, x0)
    cdef Py_ssize_t rows = y.shape[0]
    cdef Py_ssize_t m = y.shape[1]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(rows, dtype=np.float64)
    cdef double[::1] outv = out
    cdef double[:, ::1] yv = y
    cdef Py_ssize_t p, r
    cdef double best
    for p in range(rows):
        best = -np.inf
        for r in range(m):
            if r != target and yv[p, r] > best:
                best = yv[p, r]
        outv[p] = yv[p, target] - best
    return out


def stack_point(list weights, list biases, list relu_flags, object x0):
    cdef cnp.ndarray[double, ndim=1] y = np.ascontiguousarray(x0, dtype=np.float64).copy()
    cdef cnp.ndarray[double, ndim=1] ny
    cdef double[:, ::1] w
    cdef double[::1] b, yv, nyv
    cdef Py_ssize_t i, r, c, m, n
    cdef double s
    cdef bint apply_relu
    for i in range(len(weights)):
        w = weights[i]
        b = biases[i]
        apply_relu = relu_flags[i]
        m = w.shape[0]
        n = w.shape[1]
        ny = np.empty(m, dtype=np.float64)
        nyv = ny
        yv = y
        for r in range(m):
            s = b[r]
            for c in range(n):
                s += w[r, c] * yv[c]
            if apply_relu and s < 0.0:
                s = 0.0
            nyv[r] = s
        y = ny
    return y
