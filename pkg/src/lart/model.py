"""Data containers and closed-form quantities of the latency-response model.

The generative model for subject ``i`` and item ``j``::

    R_ij ~ Bernoulli(Phi(a_j * theta_i + b_j))
    log T_ij ~ Normal(omega_j - phi_j * tau_i, lam_j)      # lam_j is a variance
    (theta_i, tau_i) ~ Normal(0, [[1, rho], [rho, 1]])
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .kernels import log_std_normal_cdf, std_normal_cdf


@dataclass
class ResponseDataset:
    """Correctness matrix ``R`` and chain-of-thought lengths ``T`` (N x J).

    ``mask`` marks observed cells; ``None`` means everything was observed.
    Missing cells may hold any placeholder value in ``R`` and ``T``.
    """

    R: np.ndarray
    T: np.ndarray
    subject_ids: list[str] | None = None
    item_ids: list[str] | None = None
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.R = np.asarray(self.R)
        self.T = np.asarray(self.T, dtype=float)
        if self.R.shape != self.T.shape or self.R.ndim != 2:
            raise ValueError(f"R and T must be matching 2-D arrays, got {self.R.shape} and {self.T.shape}")
        n, j = self.R.shape
        if self.subject_ids is None:
            self.subject_ids = [f"s{i}" for i in range(n)]
        if self.item_ids is None:
            self.item_ids = [f"q{k}" for k in range(j)]
        self.subject_ids = [str(s) for s in self.subject_ids]
        self.item_ids = [str(s) for s in self.item_ids]
        if len(self.subject_ids) != n or len(self.item_ids) != j:
            raise ValueError("identifier lists do not match the matrix shape")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.R.shape:
                raise ValueError("mask shape does not match R")
            if self.mask.all():
                self.mask = None

    @property
    def n_subjects(self) -> int:
        return self.R.shape[0]

    @property
    def n_items(self) -> int:
        return self.R.shape[1]

    @property
    def observed(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.R.shape, dtype=bool)
        return self.mask

    @property
    def complete(self) -> bool:
        return self.mask is None

    @property
    def log_t(self) -> np.ndarray:
        """log T with unobserved (or non-positive) cells set to 0."""
        ok = self.observed & (self.T > 0)
        return np.log(np.where(ok, self.T, 1.0))

    def subset(self, subjects=None, items=None) -> "ResponseDataset":
        rows = np.arange(self.n_subjects) if subjects is None else np.asarray(subjects)
        cols = np.arange(self.n_items) if items is None else np.asarray(items)
        mask = None if self.mask is None else self.mask[np.ix_(rows, cols)]
        return ResponseDataset(
            R=self.R[np.ix_(rows, cols)],
            T=self.T[np.ix_(rows, cols)],
            subject_ids=[self.subject_ids[r] for r in rows],
            item_ids=[self.item_ids[c] for c in cols],
            mask=mask,
        )


@dataclass
class PopulationParams:
    """Item parameters plus the latent correlation.

    ``mode == "irt"`` marks an accuracy-only fit: ``omega = phi = 0``,
    ``lam = 1`` and ``rho = 0`` are sentinels and the CoT terms are ignored.
    """

    a: np.ndarray
    b: np.ndarray
    omega: np.ndarray
    phi: np.ndarray
    lam: np.ndarray
    rho: float
    item_ids: list[str] | None = None
    mode: str = "lart"

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float).copy()
        self.b = np.asarray(self.b, dtype=float).copy()
        self.omega = np.asarray(self.omega, dtype=float).copy()
        self.phi = np.asarray(self.phi, dtype=float).copy()
        self.lam = np.asarray(self.lam, dtype=float).copy()
        self.rho = float(self.rho)
        n = self.a.shape[0]
        for name in ("b", "omega", "phi", "lam"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
        if self.item_ids is None:
            self.item_ids = [f"q{k}" for k in range(n)]
        if self.mode not in ("lart", "irt"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def n_items(self) -> int:
        return self.a.shape[0]

    @property
    def difficulty(self) -> np.ndarray:
        """Interpretable difficulty -b/a (nan where a == 0)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.a != 0, -self.b / self.a, np.nan)

    def check(self) -> None:
        """Raise ``ValueError`` if the parameters leave the model's domain."""
        if np.any(~(self.lam > 0)):
            raise ValueError("every lam_j must be positive")
        if not abs(self.rho) < 1:
            raise ValueError(f"|rho| must be < 1, got {self.rho}")
        for name in ("a", "b", "omega", "phi", "lam"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")

    def copy(self, **changes) -> "PopulationParams":
        return replace(self, item_ids=list(self.item_ids), **changes)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.a, self.b, self.omega, self.phi, self.lam, [self.rho]])

    def subset(self, items) -> "PopulationParams":
        idx = np.asarray(items)
        return PopulationParams(
            self.a[idx], self.b[idx], self.omega[idx], self.phi[idx], self.lam[idx],
            self.rho, [self.item_ids[k] for k in idx], self.mode,
        )


@dataclass
class LatentTraits:
    theta: np.ndarray
    tau: np.ndarray
    info: np.ndarray | None = None  # (N, 2, 2)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.tau = np.asarray(self.tau, dtype=float)
        if self.info is not None:
            self.info = np.asarray(self.info, dtype=float)


class Violation(NamedTuple):
    row: int | None
    col: int | None
    reason: str


def validate(data: ResponseDataset) -> list[Violation]:
    """List every invariant violation in ``data`` (empty list means valid)."""
    out: list[Violation] = []
    obs = data.observed
    bad_r = obs & ~np.isin(data.R, (0, 1))
    for i, j in zip(*np.nonzero(bad_r)):
        out.append(Violation(int(i), int(j), f"R must be 0 or 1, got {data.R[i, j]!r}"))
    bad_t = obs & ~(np.isfinite(data.T) & (data.T > 0))
    for i, j in zip(*np.nonzero(bad_t)):
        out.append(Violation(int(i), int(j), f"T must be positive, got {data.T[i, j]!r}"))
    for kind, ids, axis in (("subject", data.subject_ids, 0), ("item", data.item_ids, 1)):
        seen: dict[str, int] = {}
        for k, name in enumerate(ids):
            if name in seen:
                row, col = (k, None) if axis == 0 else (None, k)
                out.append(Violation(row, col, f"duplicate {kind} id {name!r}"))
            else:
                seen[name] = k
    return out


def _sigma_inv(rho: float) -> np.ndarray:
    return np.array([[1.0, -rho], [-rho, 1.0]]) / (1.0 - rho * rho)


def complete_log_posterior(params: PopulationParams, traits: LatentTraits, data: ResponseDataset) -> float:
    """Complete-data log posterior of (params, traits), additive constants dropped.

    Missing cells contribute nothing.  Each observed log-length contributes
    ``-0.5 * log(lam_j) - resid**2 / (2 * lam_j)``, the normal log density with
    variance ``lam_j``.  In irt mode only the accuracy terms and a standard
    normal prior on theta are used.
    """
    params.check()
    theta = np.asarray(traits.theta, dtype=float)
    tau = np.asarray(traits.tau, dtype=float)
    if theta.shape != (data.n_subjects,) or data.n_items != params.n_items:
        raise ValueError("dimension mismatch between params, traits and data")
    obs = data.observed
    total = 0.0
    if data.n_items:
        sign = 2.0 * data.R - 1.0
        lin = np.outer(theta, params.a) + params.b
        total += float(np.sum(np.where(obs, log_std_normal_cdf(np.where(obs, sign * lin, 0.0)), 0.0)))
    if params.mode == "irt":
        return total - 0.5 * float(theta @ theta)
    if data.n_items:
        resid = data.log_t - params.omega + np.outer(tau, params.phi)
        n_obs = obs.sum(axis=0)
        total -= 0.5 * float(n_obs @ np.log(params.lam))
        total -= float(np.sum(np.where(obs, resid**2, 0.0) / (2.0 * params.lam)))
    rho = params.rho
    n = data.n_subjects
    quad = (theta @ theta - 2.0 * rho * (theta @ tau) + tau @ tau) / (1.0 - rho * rho)
    return total - 0.5 * n * np.log(1.0 - rho * rho) - 0.5 * float(quad)


@dataclass
class MarginalMoments:
    """Closed-form one- and two-item marginal quantities.

    ``corr_rr[j1, j2]`` and ``corr_tt[j1, j2]`` are latent correlations of the
    accuracy utilities and of log-lengths; diagonals are set to 1.
    ``corr_rt[j1, j2]`` is the latent correlation between the accuracy
    utility of item j1 and log T of item j2 (defined for j1 == j2 too).
    """

    p_correct: np.ndarray
    mean_log_t: np.ndarray
    var_log_t: np.ndarray
    corr_rr: np.ndarray
    corr_tt: np.ndarray
    corr_rt: np.ndarray
    item_ids: list[str] = field(default_factory=list)


def marginal_moments(params: PopulationParams) -> MarginalMoments:
    params.check()
    a, b, phi, lam = params.a, params.b, params.phi, params.lam
    sa = np.sqrt(a * a + 1.0)
    st = np.sqrt(phi * phi + lam)
    ua = a / sa
    ut = phi / st
    corr_rr = np.outer(ua, ua)
    corr_tt = np.outer(ut, ut)
    np.fill_diagonal(corr_rr, 1.0)
    np.fill_diagonal(corr_tt, 1.0)
    return MarginalMoments(
        p_correct=np.asarray(std_normal_cdf(b / sa), dtype=float).reshape(-1),
        mean_log_t=params.omega.copy(),
        var_log_t=phi * phi + lam,
        corr_rr=corr_rr,
        corr_tt=corr_tt,
        corr_rt=-params.rho * np.outer(ua, ut),
        item_ids=list(params.item_ids),
    )
