"""Mask-driven GEV (max-SNR) beamforming.

Spatial covariances are mask-weighted averages of snapshot outer products;
the beamformer solves the generalized Hermitian eigenproblem
Phi_xx w = lambda Phi_nn w via Cholesky whitening and a Jacobi eigensolver,
keeping the eigenvector of the largest eigenvalue.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.linalg

from . import kernels
from .autodiff import NotPositiveDefiniteError, cholesky_batch, hconj

COV_EPS = 1e-10
GEV_LOADING = 1e-6


@dataclasses.dataclass
class CovariancePair:
    speech: np.ndarray  # (F, D, D) Hermitian
    noise: np.ndarray  # (F, D, D) Hermitian
    empty_speech: tuple = ()
    empty_noise: tuple = ()


@dataclasses.dataclass
class BeamformerWeights:
    w: np.ndarray  # (F, D)
    eigenvalue: np.ndarray  # (F,)


def _masked_covariance(y, mask):
    """Phi_f = sum_t m_tf y y^H / sum_t m_tf; y (T, F, D), mask (T, F).

    Frequencies with zero mask mass fall back to a small multiple of the
    identity and are reported.
    """
    mass = mask.sum(axis=0)  # (F,)
    empty = mass <= 0.0
    safe = np.where(empty, 1.0, mass)
    phi = np.einsum("tf,tfd,tfe->fde", mask, y, np.conj(y)) / safe[:, None, None]
    phi = 0.5 * (phi + hconj(phi))
    if np.any(empty):
        d = y.shape[-1]
        phi = np.where(empty[:, None, None], COV_EPS * np.eye(d), phi)
    return phi, tuple(int(i) for i in np.nonzero(empty)[0])


def estimate_covariances(spec, masks, speech_class=0):
    """Per-frequency speech/noise covariances from masks.

    spec: (D, T, F) complex; masks: (K, T, F) with K >= 2.  The classes not
    selected as speech are summed into the noise mask.
    """
    spec = np.asarray(spec, dtype=np.complex128)
    masks = np.asarray(masks, dtype=np.float64)
    y = np.transpose(spec, (1, 2, 0))  # (T, F, D)
    speech_mask = masks[speech_class]
    noise_mask = masks.sum(axis=0) - speech_mask
    phi_xx, empty_x = _masked_covariance(y, speech_mask)
    phi_nn, empty_n = _masked_covariance(y, noise_mask)
    return CovariancePair(speech=phi_xx, noise=phi_nn,
                          empty_speech=empty_x, empty_noise=empty_n)


def normalize_noise_covariance(phi_nn):
    """Divide each frequency's noise covariance by its trace."""
    phi_nn = np.asarray(phi_nn, dtype=np.complex128)
    tr = np.trace(phi_nn, axis1=-2, axis2=-1).real
    if np.any(tr <= 0.0):
        bad = int(np.nonzero(tr <= 0.0)[0][0])
        raise ValueError(
            f"noise covariance trace nonpositive at frequency {bad}"
        )
    return phi_nn / tr[..., None, None]


def gev_weights(cov: CovariancePair) -> BeamformerWeights:
    """Max-SNR weights per frequency.

    Whitens with the Cholesky factor of the trace-normalized noise
    covariance, solves the standard Hermitian eigenproblem for the whitened
    speech covariance, keeps the unit-norm eigenvector of the largest
    eigenvalue and back-projects: w = L^-H u.  The phase is fixed so the
    largest-magnitude component of w is real and positive.
    """
    phi_xx = np.asarray(cov.speech, dtype=np.complex128)
    phi_nn = normalize_noise_covariance(cov.noise)
    f, d, _ = phi_xx.shape

    # diagonal loading (relative to the unit trace) caps the condition
    # number; without it, whitening a near-singular noise covariance
    # amplifies the eigensolver error past the residual bound
    reg = phi_nn + GEV_LOADING * np.eye(d)
    try:
        chol = cholesky_batch(reg, "gev_weights")
    except NotPositiveDefiniteError as exc:
        raise NotPositiveDefiniteError(
            f"noise covariance not factorizable at frequency "
            f"indices {exc.indices}",
            indices=exc.indices,
        ) from None

    linv = np.empty_like(chol)
    eye = np.eye(d, dtype=np.complex128)
    for fi in range(f):
        linv[fi] = scipy.linalg.solve_triangular(chol[fi], eye, lower=True)
    whitened = linv @ phi_xx @ hconj(linv)
    whitened = 0.5 * (whitened + hconj(whitened))

    evals, evecs = kernels.eigh_batch(whitened)
    lam = evals[:, -1]
    u = evecs[:, :, -1]
    u = u / np.linalg.norm(u, axis=-1, keepdims=True)
    w = np.einsum("fde,fd->fe", np.conj(linv), u)  # L^-H u

    # phase convention: largest-magnitude component real-positive
    idx = np.argmax(np.abs(w), axis=-1)
    anchor = w[np.arange(f), idx]
    phase = anchor / np.maximum(np.abs(anchor), 1e-300)
    w = w * np.conj(phase)[:, None]

    resid = np.einsum("fde,fe->fd", phi_xx, w) \
        - lam[:, None] * np.einsum("fde,fe->fd", reg, w)
    rhs = np.linalg.norm(np.einsum("fde,fe->fd", phi_xx, w), axis=-1)
    bad = np.linalg.norm(resid, axis=-1) > 1e-8 * np.maximum(rhs, 1e-300)
    if np.any(bad):
        raise RuntimeError(
            f"eigen residual bound violated at frequency "
            f"{int(np.nonzero(bad)[0][0])}"
        )
    return BeamformerWeights(w=w, eigenvalue=lam)


def apply_beamformer(spec, w):
    """x_hat_tf = w_f^H y_tf; spec (D, T, F), w (F, D) -> (T, F)."""
    spec = np.asarray(spec, dtype=np.complex128)
    w = np.asarray(w, dtype=np.complex128)
    if spec.shape[0] != w.shape[-1] or spec.shape[2] != w.shape[0]:
        raise ValueError(
            f"shape mismatch: spectrogram {spec.shape} vs weights {w.shape}"
        )
    return np.einsum("fd,dtf->tf", np.conj(w), spec)
