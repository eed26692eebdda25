# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled SGD sweeps.

Mirrors ``_pykernels`` operation for operation; see that module for the
calling contract.  Built with -ffp-contract=off so no FMA changes rounding.
"""
from libc.math cimport exp, log, sqrt, fabs
from libc.stdlib cimport malloc, free

import numpy as np


cdef inline double _dot(double* u, double* v, Py_ssize_t d) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t k
    for k in range(d):
        s += u[k] * v[k]
    return s


cdef inline void _normalize(double* w, Py_ssize_t d, double eps) noexcept nogil:
    cdef double ss = 0.0
    cdef double norm, fill
    cdef Py_ssize_t k
    for k in range(d):
        ss += w[k] * w[k]
    norm = sqrt(ss)
    if norm > eps:
        for k in range(d):
            w[k] = w[k] / norm
    else:
        fill = 1.0 / sqrt(<double>d)
        for k in range(d):
            w[k] = fill


cdef inline double _deviation(double* w, Py_ssize_t d) noexcept nogil:
    cdef double ss = 0.0
    cdef Py_ssize_t k
    for k in range(d):
        ss += w[k] * w[k]
    return fabs(sqrt(ss) - 1.0)


cdef double _sweep(double[:, ::1] U, double[:, ::1] V,
                   const long long[::1] users, const long long[::1] items,
                   const double[::1] targets, bint has_targets,
                   double lr, double eps, int n_iter, bint track, int rule) except -1.0:
    cdef Py_ssize_t d = U.shape[1]
    cdef Py_ssize_t n = users.shape[0]
    cdef Py_ssize_t t, k
    cdef int it
    cdef double x, g, step, xx, diff, sgn, c, r, du, dv
    cdef double worst = 0.0
    cdef double* u
    cdef double* v
    cdef double* u_old = <double*> malloc(d * sizeof(double))
    if u_old == NULL:
        raise MemoryError()
    try:
        with nogil:
            for t in range(n):
                u = &U[users[t], 0]
                v = &V[items[t], 0]
                r = targets[t] if has_targets else 0.0
                for it in range(n_iter):
                    for k in range(d):
                        u_old[k] = u[k]
                    x = _dot(u, v, d)
                    if rule == 3:
                        step = lr * 2.0 * (r - x)
                        for k in range(d):
                            u[k] = u[k] + step * v[k]
                        for k in range(d):
                            v[k] = v[k] + step * u_old[k]
                        continue
                    if x < eps:
                        x = eps
                    if rule == 0:
                        g = (x + 1.0) / x + log(x) - 1.0
                        step = lr * g
                        for k in range(d):
                            u[k] = u[k] + step * v[k]
                        for k in range(d):
                            v[k] = v[k] + step * u_old[k]
                    elif rule == 1:
                        for k in range(d):
                            u[k] = u[k] + lr * (v[k] / x - 2.0 * u[k])
                        for k in range(d):
                            v[k] = v[k] + lr * (u_old[k] / x - 2.0 * v[k])
                    else:
                        xx = exp(x * log(x))
                        diff = xx - r
                        if diff > 0.0:
                            sgn = 1.0
                        elif diff < 0.0:
                            sgn = -1.0
                        else:
                            sgn = 0.0
                        c = (xx * sgn - x) * (1.0 + log(x))
                        step = lr * c
                        for k in range(d):
                            u[k] = u[k] - step * v[k]
                        for k in range(d):
                            v[k] = v[k] - step * u_old[k]
                    _normalize(u, d, eps)
                    _normalize(v, d, eps)
                    if track:
                        du = _deviation(u, d)
                        dv = _deviation(v, d)
                        if du > worst:
                            worst = du
                        if dv > worst:
                            worst = dv
    finally:
        free(u_old)
    return worst


_EMPTY = np.zeros(1, dtype=np.float64)


def _check(U, V, users, items):
    if U.shape[1] != V.shape[1]:
        raise ValueError("latent dims differ")
    if users.shape[0] != items.shape[0]:
        raise ValueError("schedule arrays differ in length")
    if users.shape[0] and (users.min() < 0 or users.max() >= U.shape[0]
                           or items.min() < 0 or items.max() >= V.shape[0]):
        raise IndexError("schedule index out of range")


def sgd_poissonmat(U, V, users, items, double lr, double eps, int n_iter, bint track=False):
    _check(U, V, users, items)
    return _sweep(U, V, users, items, _EMPTY, False, lr, eps, n_iter, track, 0)


def sgd_zeromat(U, V, users, items, double lr, double eps, int n_iter, bint track=False):
    _check(U, V, users, items)
    return _sweep(U, V, users, items, _EMPTY, False, lr, eps, n_iter, track, 1)


def sgd_dotmat(U, V, users, items, targets, double lr, double eps, int n_iter, bint track=False):
    _check(U, V, users, items)
    if targets.shape[0] != users.shape[0]:
        raise ValueError("targets length differs from schedule")
    return _sweep(U, V, users, items, targets, True, lr, eps, n_iter, track, 2)


def sgd_classic_mf(U, V, users, items, targets, double lr, int n_iter):
    _check(U, V, users, items)
    if targets.shape[0] != users.shape[0]:
        raise ValueError("targets length differs from schedule")
    _sweep(U, V, users, items, targets, True, lr, 0.0, n_iter, False, 3)
