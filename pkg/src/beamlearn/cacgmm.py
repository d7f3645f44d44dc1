"""Complex angular-central-Gaussian mixture model (cACGMM).

Observations are norm-normalized snapshot vectors ỹ_tf (T, F, D); class
affiliations γ are (K, T, F); mixture weights π are (K, F) and shape
matrices B are (K, F, D, D) Hermitian.  This module is the plain numpy
path (EM baseline / teacher mode); the differentiable counterpart used in
training lives in ``mixture_graph``.
"""

from __future__ import annotations

import dataclasses
import itertools
import math

import numpy as np

from .autodiff import (
    NotPositiveDefiniteError,
    cholesky_batch,
    cholesky_inverse_np,
    cholesky_solve_np,
    hconj,
)

EPS_REG = 1e-10
GAMMA_FLOOR = 1e-10


@dataclasses.dataclass
class MixtureParams:
    pi: np.ndarray  # (K, F)
    shapes: np.ndarray  # (K, F, D, D) Hermitian

    @property
    def num_classes(self):
        return self.pi.shape[0]


def normalize(spec: np.ndarray) -> np.ndarray:
    """Unit-normalize snapshots: (D, T, F) spectrogram -> ỹ (T, F, D).

    Zero-power bins map to the constant unit vector (1,...,1)/sqrt(D).
    """
    y = np.transpose(np.asarray(spec, dtype=np.complex128), (1, 2, 0))
    norm = np.linalg.norm(y, axis=-1, keepdims=True)
    d = y.shape[-1]
    filler = np.full(d, 1.0 / math.sqrt(d), dtype=np.complex128)
    zero = norm[..., 0] == 0.0
    out = np.where(zero[..., None], filler, y / np.where(norm == 0.0, 1.0, norm))
    return out


def regularize_hermitian(b: np.ndarray, eps: float = EPS_REG) -> np.ndarray:
    """B + eps * tr(B)/D * I; keeps rank-deficient shape matrices invertible."""
    d = b.shape[-1]
    tr = np.trace(b, axis1=-2, axis2=-1).real
    return b + (eps / d) * tr[..., None, None] * np.eye(d)


def _log_normalizer(d: int) -> float:
    return math.lgamma(d) - math.log(2.0) - d * math.log(math.pi)


def cacg_log_density(ytilde: np.ndarray, shapes: np.ndarray) -> np.ndarray:
    """ln p(ỹ | B) for the complex angular central Gaussian, log domain.

    ytilde: (..., D) unit vectors; shapes: (K, F, D, D) (or any batch shape
    broadcastable against ytilde's batch dims after a leading class axis).
    With ytilde (T, F, D) and shapes (K, F, D, D) the result is (K, T, F).
    """
    y = np.asarray(ytilde, dtype=np.complex128)
    b = regularize_hermitian(np.asarray(shapes, dtype=np.complex128))
    d = y.shape[-1]
    chol = cholesky_batch(b, "cacg_log_density")
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=-2, axis2=-1).real).sum(-1)
    # solve per (K, F) against all T right-hand sides
    u = cholesky_solve_np(chol[:, None], y[..., None])[..., 0]  # (K, T, F, D)
    quad = np.einsum("...d,...d->...", np.conj(y), u).real
    out = _log_normalizer(d) - logdet[:, None, :] - d * np.log(quad)
    if not np.all(np.isfinite(out)):
        k, t, f = [int(i) for i in np.argwhere(~np.isfinite(out))[0]]
        raise FloatingPointError(
            f"non-finite log density at (t={t}, f={f}, k={k})"
        )
    return out


def m_step(ytilde, gamma, shapes_init=None, fixed_point_iters=1):
    """Weighted-update M-step.

    π_kf = mean_t γ_ktf; B_kf = D Σ_t γ (ỹỹ^H)/(ỹ^H B_prev^-1 ỹ) / Σ_t γ,
    re-applied ``fixed_point_iters`` times starting from ``shapes_init``
    (identity when None).  Returns (MixtureParams, diagnostics dict); classes
    with zero affiliation mass at some frequency fall back to the regularized
    identity and are reported in diagnostics["empty_classes"].
    """
    y = np.asarray(ytilde, dtype=np.complex128)
    gamma = np.asarray(gamma, dtype=np.float64)
    k, t, f = gamma.shape
    d = y.shape[-1]
    if fixed_point_iters < 1:
        raise ValueError("fixed_point_iters must be >= 1")

    pi = gamma.mean(axis=1)  # (K, F)
    mass = gamma.sum(axis=1)  # (K, F)
    empty = mass <= 0.0
    safe_mass = np.where(empty, 1.0, mass)

    outer = y[..., :, None] * np.conj(y[..., None, :])  # (T, F, D, D)
    shapes = shapes_init
    if shapes is None:
        shapes = np.broadcast_to(np.eye(d, dtype=np.complex128), (k, f, d, d))
    for _ in range(fixed_point_iters):
        chol = cholesky_batch(
            regularize_hermitian(np.ascontiguousarray(shapes)), "m_step"
        )
        u = cholesky_solve_np(chol[:, None], y[..., None])[..., 0]
        quad = np.einsum("...d,...d->...", np.conj(y), u).real  # (K, T, F)
        w = gamma / np.maximum(quad, 1e-300)
        shapes = d * np.einsum("ktf,tfde->kfde", w, outer) / safe_mass[..., None, None]
    shapes = 0.5 * (shapes + hconj(shapes))
    if np.any(empty):
        shapes = np.where(empty[..., None, None], np.eye(d, dtype=np.complex128), shapes)
    diagnostics = {"empty_classes": [tuple(map(int, i)) for i in np.argwhere(empty)]}
    return MixtureParams(pi=pi, shapes=shapes), diagnostics


def e_step(ytilde, params: MixtureParams) -> np.ndarray:
    """Posterior affiliations γ_ktf via log-sum-exp."""
    log_p = cacg_log_density(ytilde, params.shapes)  # (K, T, F)
    log_w = np.log(np.maximum(params.pi, GAMMA_FLOOR))[:, None, :]
    score = log_w + log_p
    m = score.max(axis=0, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise FloatingPointError("all class log densities are -inf")
    e = np.exp(score - m)
    return e / e.sum(axis=0, keepdims=True)


def log_likelihood(ytilde, params: MixtureParams, gamma_for_aux=None,
                   variant="ml") -> float:
    """Observation log likelihood or one of its variants.

    ml:       Σ_tf ln Σ_k π_kf p(ỹ|B_kf)
    ml_equal: same with π replaced by 1/K
    auxiliary: Σ_ktf γ̃ ln(π_kf p(ỹ|B_kf)), γ̃ given via gamma_for_aux
    """
    log_p = cacg_log_density(ytilde, params.shapes)
    k = params.num_classes
    if variant == "ml":
        score = np.log(np.maximum(params.pi, GAMMA_FLOOR))[:, None, :] + log_p
    elif variant == "ml_equal":
        score = log_p - math.log(k)
    elif variant == "auxiliary":
        if gamma_for_aux is None:
            raise ValueError("auxiliary variant requires gamma_for_aux")
        gam = np.maximum(np.asarray(gamma_for_aux), GAMMA_FLOOR)
        score = np.log(np.maximum(params.pi, GAMMA_FLOOR))[:, None, :] + log_p
        return float((gam * score).sum())
    else:
        raise ValueError(f"unknown likelihood variant {variant!r}")
    m = score.max(axis=0)
    return float((m + np.log(np.exp(score - m).sum(axis=0))).sum())


def em_fit(ytilde, num_classes=2, iterations=20, init=None, seed=0,
           fixed_point_iters=1):
    """Plain iterative EM (teacher/baseline mode).

    Returns (MixtureParams, affiliations, log-likelihood trace).  The trace
    holds the ml log likelihood after each iteration's parameter update.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    y = np.asarray(ytilde, dtype=np.complex128)
    t, f = y.shape[:2]
    if init is None:
        rng = np.random.default_rng(seed)
        gamma = rng.dirichlet(np.ones(num_classes), size=(t, f))
        gamma = np.transpose(gamma, (2, 0, 1))
    else:
        gamma = np.asarray(init, dtype=np.float64)

    params = None
    shapes = None
    trace = []
    for _ in range(iterations):
        params, _ = m_step(y, gamma, shapes_init=shapes,
                           fixed_point_iters=fixed_point_iters)
        shapes = params.shapes
        gamma = e_step(y, params)
        trace.append(log_likelihood(y, params))
    return params, gamma, trace


def _pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def permutation_align(gamma):
    """Resolve per-frequency class permutations by mask correlation.

    Greedy sweep over frequencies keeping a running centroid time profile per
    class; at each frequency the permutation maximizing the summed Pearson
    correlation with the centroids wins.  Returns (aligned affiliations,
    permutation per frequency as an (F, K) index array such that
    aligned[k, :, f] = gamma[perm[f, k], :, f]).
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    k, t, f = gamma.shape
    if k < 2:
        raise ValueError("permutation alignment needs at least two classes")
    perms = list(itertools.permutations(range(k)))
    identity = tuple(range(k))
    aligned = np.empty_like(gamma)
    perm_map = np.empty((f, k), dtype=np.int64)

    centroid = gamma[:, :, 0].copy()  # (K, T)
    count = 0
    for fi in range(f):
        best = identity
        best_score = -np.inf
        # permutations() yields the identity first; strict improvement keeps
        # the identity on ties (constant masks score 0 everywhere)
        for perm in perms:
            score = sum(
                _pearson(centroid[ki], gamma[perm[ki], :, fi]) for ki in range(k)
            )
            if score > best_score + 1e-12:
                best, best_score = perm, score
        perm_map[fi] = best
        chosen = gamma[list(best), :, fi]
        aligned[:, :, fi] = chosen
        centroid = (centroid * count + chosen) / (count + 1)
        count += 1
    return aligned, perm_map
