"""Pure-numpy cyclic Jacobi eigensolver for batched Hermitian matrices.

Reference implementation and import-time fallback for the compiled kernel in
``_jacobi``.  Both produce eigenvalues in ascending order and unit-norm
eigenvectors (columns of V), with A = V diag(w) V^H.
"""

from __future__ import annotations

import numpy as np

DEFAULT_TOL = 1e-12
MAX_SWEEPS = 60


def _jacobi_single(a, tol):
    d = a.shape[0]
    v = np.eye(d, dtype=np.complex128)
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return np.zeros(d), v
    thresh = tol * norm
    for _ in range(MAX_SWEEPS):
        off2 = np.sum(np.abs(a) ** 2) - np.sum(np.abs(np.diagonal(a)) ** 2)
        off = np.sqrt(max(off2, 0.0))  # rounding can push off2 below zero
        if off <= thresh:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if abs(apq) <= thresh / (d * d):
                    continue
                app = a[p, p].real
                aqq = a[q, q].real
                phase = apq / abs(apq)
                tau = (aqq - app) / (2.0 * abs(apq))
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # columns p, q of the rotation: J[p,p]=c, J[q,q]=c,
                # J[p,q] = s*phase, J[q,p] = -s*conj(phase)
                col_p = a[:, p] * c - a[:, q] * (s * np.conj(phase))
                col_q = a[:, p] * (s * phase) + a[:, q] * c
                a[:, p] = col_p
                a[:, q] = col_q
                row_p = a[p, :] * c - a[q, :] * (s * phase)
                row_q = a[p, :] * (s * np.conj(phase)) + a[q, :] * c
                a[p, :] = row_p
                a[q, :] = row_q
                a[p, q] = 0.0
                a[q, p] = 0.0
                vcol_p = v[:, p] * c - v[:, q] * (s * np.conj(phase))
                vcol_q = v[:, p] * (s * phase) + v[:, q] * c
                v[:, p] = vcol_p
                v[:, q] = vcol_q
    w = np.diagonal(a).real.copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def eigh_batch(a, tol=DEFAULT_TOL):
    """Eigendecomposition of a batch of Hermitian matrices.

    a: (..., D, D) complex.  Returns (w, V) with w (..., D) ascending and
    V (..., D, D) unitary columns.
    """
    a = np.asarray(a, dtype=np.complex128)
    batch = a.shape[:-2]
    d = a.shape[-1]
    flat = a.reshape(-1, d, d).copy()
    w = np.empty((flat.shape[0], d))
    v = np.empty_like(flat)
    for i in range(flat.shape[0]):
        w[i], v[i] = _jacobi_single(flat[i], tol)
    return w.reshape(batch + (d,)), v.reshape(batch + (d, d))
