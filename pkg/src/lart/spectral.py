"""Non-iterative SVD-based starting values for the SAEM fit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import std_normal_quantile
from .model import LatentTraits, PopulationParams, ResponseDataset

RHO_CLAMP = 0.999
LAM_FLOOR = 1e-6


@dataclass
class SpectralConfig:
    epsilon: float = 1e-9
    k_latent: int = 1

    def __post_init__(self):
        if not 0 < self.epsilon < 0.5:
            raise ValueError("epsilon must lie in (0, 0.5)")
        if self.k_latent != 1:
            raise ValueError("only a single latent factor is supported")


def _top1(mat):
    u, s, vt = np.linalg.svd(mat, full_matrices=False)
    return u[:, 0], s[0], vt[0]


def rank_cutoff(singular_values: np.ndarray, n: int, j: int, k_latent: int = 1) -> int:
    """max(K + 1, largest k with sigma_k >= 1.01 sqrt(max(N, J)))."""
    above = np.nonzero(singular_values >= 1.01 * np.sqrt(max(n, j)))[0]
    largest = int(above[-1]) + 1 if above.size else 0
    return max(k_latent + 1, largest)


def spectral_initialize(data: ResponseDataset, cfg: SpectralConfig | None = None) -> tuple[PopulationParams, LatentTraits]:
    """Starting values for every population parameter and latent trait.

    Accuracy side: low-rank denoising of R, clamp into [eps, 1 - eps], probit
    transform, column means as intercepts and the leading singular pair of the
    centred matrix as (theta, a).  CoT side: column means of log T as omega
    and the leading singular pair of the centred log T as (tau, phi), with
    tau's sign chosen so that the centred log length is about -phi * tau.
    """
    cfg = cfg or SpectralConfig()
    if not data.complete:
        raise ValueError("spectral initialisation needs a fully observed dataset")
    n, j = data.R.shape
    if n < 2 or j < 2:
        raise ValueError("need at least two subjects and two items")
    R = data.R.astype(float)
    u, s, vt = np.linalg.svd(R, full_matrices=False)
    k = min(rank_cutoff(s, n, j, cfg.k_latent), s.size)
    X = (u[:, :k] * s[:k]) @ vt[:k]
    eps = cfg.epsilon
    M = std_normal_quantile(np.clip(X, eps, 1.0 - eps))
    b = M.mean(axis=0)
    uu, ss, vv = _top1(M - b)
    theta = np.sqrt(n) * uu
    a = ss * vv / np.sqrt(n)

    log_t = data.log_t
    omega = log_t.mean(axis=0)
    centred = log_t - omega
    ut, st, vtt = _top1(centred)
    phi = st * vtt / np.sqrt(n)
    tau = -np.sqrt(n) * ut
    lam = np.maximum(np.mean((centred + np.outer(tau, phi)) ** 2, axis=0), LAM_FLOOR)

    if a.sum() < 0:
        a, theta = -a, -theta
    if phi.sum() < 0:
        phi, tau = -phi, -tau
    rho = float(np.clip(theta @ tau / n, -RHO_CLAMP, RHO_CLAMP))
    params = PopulationParams(a, b, omega, phi, lam, rho, item_ids=list(data.item_ids))
    return params, LatentTraits(theta, tau)
