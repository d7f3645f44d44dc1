# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Cyclic Jacobi eigensolver for batched Hermitian matrices (hot kernel).

Same contract as kernels.jacobi_py.eigh_batch; D is expected to be small
(microphone counts, D <= 8), the batch axis is the frequency axis.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()

DEF MAX_SWEEPS = 60


cdef inline double _cabs(double complex z) noexcept:
    return sqrt(z.real * z.real + z.imag * z.imag)


cdef void _jacobi_one(double complex[:, ::1] a, double complex[:, ::1] v,
                      double[::1] w, int d, double tol) noexcept:
    cdef int p, q, i, sweep
    cdef double norm2 = 0.0, diag2, off, thresh, app, aqq, tau, t, c, s, absapq
    cdef double complex apq, phase, sp, spc, tmp_p, tmp_q

    for p in range(d):
        for q in range(d):
            norm2 += _cabs(a[p, q]) ** 2
    if norm2 == 0.0:
        for p in range(d):
            w[p] = 0.0
        return
    thresh = tol * sqrt(norm2)

    for sweep in range(MAX_SWEEPS):
        off = 0.0
        for p in range(d):
            for q in range(d):
                if p != q:
                    off += _cabs(a[p, q]) ** 2
        if sqrt(off) <= thresh:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                absapq = _cabs(apq)
                if absapq <= thresh / (d * d):
                    continue
                app = a[p, p].real
                aqq = a[q, q].real
                phase = apq / absapq
                tau = (aqq - app) / (2.0 * absapq)
                if tau >= 0.0:
                    t = 1.0 / (tau + sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + sqrt(1.0 + tau * tau))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                sp = s * phase
                spc = s * phase.conjugate()
                for i in range(d):
                    tmp_p = a[i, p] * c - a[i, q] * spc
                    tmp_q = a[i, p] * sp + a[i, q] * c
                    a[i, p] = tmp_p
                    a[i, q] = tmp_q
                for i in range(d):
                    tmp_p = a[p, i] * c - a[q, i] * sp
                    tmp_q = a[p, i] * spc + a[q, i] * c
                    a[p, i] = tmp_p
                    a[q, i] = tmp_q
                a[p, q] = 0.0
                a[q, p] = 0.0
                for i in range(d):
                    tmp_p = v[i, p] * c - v[i, q] * spc
                    tmp_q = v[i, p] * sp + v[i, q] * c
                    v[i, p] = tmp_p
                    v[i, q] = tmp_q
    for p in range(d):
        w[p] = a[p, p].real


def eigh_batch(a, double tol=1e-12):
    """Eigendecomposition of (..., D, D) Hermitian matrices, ascending order."""
    a = np.asarray(a, dtype=np.complex128)
    batch = a.shape[:-2]
    cdef int d = a.shape[a.ndim - 1]
    flat = np.ascontiguousarray(a.reshape(-1, d, d)).copy()
    cdef Py_ssize_t n = flat.shape[0]
    w = np.empty((n, d))
    v = np.zeros((n, d, d), dtype=np.complex128)
    v[:, range(d), range(d)] = 1.0

    cdef double complex[:, :, ::1] av = flat
    cdef double complex[:, :, ::1] vv = v
    cdef double[:, ::1] wv = w
    cdef Py_ssize_t i
    for i in range(n):
        _jacobi_one(av[i], vv[i], wv[i], d, tol)

    order = np.argsort(w, axis=-1, kind="stable")
    w = np.take_along_axis(w, order, axis=-1)
    v = np.take_along_axis(v, order[:, None, :], axis=-1)
    return w.reshape(batch + (d,)), v.reshape(batch + (d, d))
