"""Differentiable cACGMM pieces built from tape primitives.

Mirrors the numpy math in ``cacgmm`` but records every operation on a tape
so the likelihood can be backpropagated through the M-step and E-step into
the mask estimator.  The observations themselves are constants; only the
initial affiliations carry gradients.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .cacgmm import EPS_REG, GAMMA_FLOOR, _log_normalizer


def regularize(shapes):
    """B + eps*tr(B)/D*I as graph ops (gradient flows through the regularizer)."""
    k, f, d, _ = shapes.shape
    tr = ad.real_part(ad.trace(shapes))  # (K, F)
    scale = ad.reshape(ad.mul(tr, EPS_REG / d), (k, f, 1, 1))
    bump = ad.mul(scale, np.eye(d, dtype=np.complex128))
    return ad.add(shapes, bump)


def m_step_graph(gamma0, ytilde, fixed_point_iters=1):
    """Differentiable M-step.

    gamma0: tape tensor (K, T, F); ytilde: constant ndarray (T, F, D).
    Shape matrices start from the identity and the weighted update is applied
    ``fixed_point_iters`` times.  Returns (pi (K,F), shapes (K,F,D,D)).
    """
    k, t, f = gamma0.shape
    d = ytilde.shape[-1]
    outer = ytilde[..., :, None] * np.conj(ytilde[..., None, :])  # const

    pi = ad.mean(gamma0, axis=1)  # (K, F)
    mass = ad.maximum(ad.sum_(gamma0, axis=1), 1e-12)  # (K, F)

    shapes = None
    for it in range(fixed_point_iters):
        if shapes is None:
            weights = gamma0  # ỹ^H I^-1 ỹ = 1 for unit-norm snapshots
        else:
            quad = _solve_quad(regularize(shapes), ytilde)  # (K, T, F)
            weights = ad.div(gamma0, ad.maximum(quad, 1e-300))
        num = ad.weighted_outer_sum(weights, outer)  # (K, F, D, D)
        shapes = ad.mul(
            ad.div(num, ad.reshape(mass, (k, f, 1, 1))), float(d)
        )
    return pi, regularize(shapes)


def _solve_quad(shapes_reg, ytilde):
    """q_ktf = ỹ^H B^-1 ỹ on the tape; shapes (K,F,D,D), ỹ const (T,F,D)."""
    k, f = shapes_reg.shape[:2]
    b = ad.reshape(shapes_reg, (k, 1, f) + shapes_reg.shape[-2:])
    u = ad.hermitian_solve(b, ytilde)  # (K, T, F, D)
    return ad.real_part(ad.sum_(ad.mul(np.conj(ytilde), u), axis=-1))


def log_density_graph(shapes_reg, ytilde):
    """ln p(ỹ|B) on the tape -> (K, T, F)."""
    k, f, d = shapes_reg.shape[0], shapes_reg.shape[1], shapes_reg.shape[-1]
    quad = _solve_quad(shapes_reg, ytilde)
    logdet = ad.reshape(ad.log_det_hermitian(shapes_reg), (k, 1, f))
    const = _log_normalizer(d)
    return ad.sub(ad.sub(const, logdet), ad.mul(ad.log(quad), float(d)))


def e_step_graph(pi, log_p):
    """Posterior affiliations from log weights and log densities."""
    k, f = pi.shape
    log_w = ad.reshape(ad.log(ad.maximum(pi, GAMMA_FLOOR)), (k, 1, f))
    score = ad.add(log_w, log_p)
    lse = ad.logsumexp(score, axis=0, keepdims=True)
    return ad.exp(ad.sub(score, lse)), score, lse


def log_likelihood_graph(pi, log_p, variant, gamma_for_aux=None):
    """Scalar log likelihood node for the chosen loss variant."""
    k = pi.shape[0]
    tf = log_p.shape[1] * log_p.shape[2]
    if variant == "ml":
        log_w = ad.reshape(ad.log(ad.maximum(pi, GAMMA_FLOOR)), (k, 1, pi.shape[1]))
        return ad.sum_(ad.logsumexp(ad.add(log_w, log_p), axis=0))
    if variant == "ml_equal":
        lse = ad.sum_(ad.logsumexp(log_p, axis=0))
        return ad.sub(lse, tf * math.log(k))
    if variant == "auxiliary":
        if gamma_for_aux is None:
            raise ValueError("auxiliary variant requires gamma_for_aux")
        log_w = ad.reshape(ad.log(ad.maximum(pi, GAMMA_FLOOR)), (k, 1, pi.shape[1]))
        score = ad.add(log_w, log_p)
        gam = ad.maximum(gamma_for_aux, GAMMA_FLOOR)
        return ad.sum_(ad.mul(gam, score))
    raise ValueError(f"unknown likelihood variant {variant!r}")
