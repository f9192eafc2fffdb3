"""Stochastic-approximation EM for the population parameters.

Each iteration draws (theta, tau) exactly from their posterior, augments every
response with its probit utility Z ~ N(a theta + b, 1) truncated to the sign
of 2R - 1, and folds the complete-data sufficient statistics into a running
Robbins-Monro average.  Under the augmentation the complete-data model is a
set of Gaussian regressions, so every M-step block has a closed form.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from .kernels import RngStream, SamplingError
from .model import LatentTraits, PopulationParams, ResponseDataset
from .sampler import batch_factors, sample_probit_augmentation, sample_tau_given_theta, sample_theta_batch

log = logging.getLogger(__name__)

RHO_CLAMP = 0.999
LAM_FLOOR = 1e-8
VAR_FLOOR = 1e-10
BLOCK_SIZE = 256


def worker_count(requested: int | None = None) -> int:
    """Worker threads: explicit request, else ``LART_THREADS`` (0 or unset means auto)."""
    if requested is None:
        requested = int(os.environ.get("LART_THREADS", "0") or 0)
    if requested <= 0:
        requested = os.cpu_count() or 1
    return max(1, requested)


def decay_schedule(t: int) -> float:
    return 1.0 / t


def burn_in_schedule(t: int, burn_in: int = 20) -> float:
    return 1.0 if t <= burn_in else 1.0 / (t - burn_in)


@dataclass
class FitConfig:
    max_iters: int = 500
    mc_samples: int = 1
    step_schedule: str | Callable[[int], float] = "decay"
    tol: float = 1e-4
    seed: int = 0
    mode: str = "lart"
    window: int = 20
    burn_in: int = 20
    workers: int | None = None
    expand: bool = True

    def __post_init__(self):
        if self.mode not in ("lart", "irt"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.max_iters < 1 or self.mc_samples < 1:
            raise ValueError("max_iters and mc_samples must be positive")
        if not callable(self.step_schedule) and self.step_schedule not in ("decay", "burn-in"):
            raise ValueError(f"unknown step schedule {self.step_schedule!r}")

    def alpha(self, t: int) -> float:
        if callable(self.step_schedule):
            return float(self.step_schedule(t))
        if self.step_schedule == "burn-in":
            return burn_in_schedule(t, self.burn_in)
        return decay_schedule(t)


@dataclass
class SaSufficientStats:
    """Running averages of complete-data sufficient statistics.

    Per-item arrays sum over subjects who answered the item; ``l`` denotes
    log T and ``z`` the probit utility.  ``s_tt``, ``s_uu``, ``s_tu`` are the
    sums of theta^2, tau^2 and theta*tau over all subjects, ``s_t`` and ``s_u``
    the sums of theta and tau.
    """

    n: np.ndarray
    s_theta: np.ndarray
    s_theta2: np.ndarray
    s_z: np.ndarray
    s_z2: np.ndarray
    s_ztheta: np.ndarray
    s_tau: np.ndarray
    s_tau2: np.ndarray
    s_ltau: np.ndarray
    s_l: np.ndarray
    s_l2: np.ndarray
    s_tt: float
    s_uu: float
    s_tu: float
    s_t: float
    s_u: float
    n_subjects: int

    def update(self, current: "SaSufficientStats", alpha: float) -> "SaSufficientStats":
        """(1 - alpha) * self + alpha * current, field by field."""
        vals = {}
        for f in fields(self):
            if f.name == "n_subjects":
                vals[f.name] = self.n_subjects
                continue
            old = getattr(self, f.name)
            new = getattr(current, f.name)
            vals[f.name] = (1.0 - alpha) * old + alpha * new
        return SaSufficientStats(**vals)

    @classmethod
    def from_draws(cls, theta, tau, Z, log_t, mask) -> "SaSufficientStats":
        m = mask.astype(float)
        zt = np.where(mask, Z, 0.0)
        lt = np.where(mask, log_t, 0.0)
        return cls(
            n=m.sum(axis=0),
            s_theta=theta @ m,
            s_theta2=(theta * theta) @ m,
            s_z=zt.sum(axis=0),
            s_z2=(zt * zt).sum(axis=0),
            s_ztheta=theta @ zt,
            s_tau=tau @ m,
            s_tau2=(tau * tau) @ m,
            s_ltau=tau @ lt,
            s_l=lt.sum(axis=0),
            s_l2=(lt * lt).sum(axis=0),
            s_tt=float(theta @ theta),
            s_uu=float(tau @ tau),
            s_tu=float(theta @ tau),
            s_t=float(theta.sum()),
            s_u=float(tau.sum()),
            n_subjects=theta.shape[0],
        )

    def __add__(self, other: "SaSufficientStats") -> "SaSufficientStats":
        vals = {f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)}
        return SaSufficientStats(**vals)

    def scaled(self, k: float) -> "SaSufficientStats":
        vals = {f.name: getattr(self, f.name) * k for f in fields(self) if f.name != "n_subjects"}
        return SaSufficientStats(n_subjects=self.n_subjects, **vals)


@dataclass
class TraceRecord:
    iteration: int
    alpha: float
    param_norm: float
    objective: float
    change: float


@dataclass
class FitResult:
    params: PopulationParams
    trace: list[TraceRecord]
    converged: bool
    iters_run: int
    stats: SaSufficientStats | None = None
    draws: LatentTraits | None = None
    seed: int = 0
    tol: float = 0.0


# ---------------------------------------------------------------- M-step blocks


def _centred(n, s_x, s_xx, s_y, s_xy):
    with np.errstate(divide="ignore", invalid="ignore"):
        vxx = s_xx - s_x * s_x / n
        vxy = s_xy - s_x * s_y / n
    return vxx, vxy


def m_step_accuracy(stats: SaSufficientStats) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares regression of Z on theta for every item."""
    n = stats.n
    vxx, vxy = _centred(n, stats.s_theta, stats.s_theta2, stats.s_z, stats.s_ztheta)
    degenerate = ~(vxx / np.maximum(n, 1) > VAR_FLOOR)
    if degenerate.any():
        log.warning("theta variance degenerate for %d item(s); setting a_j = 0", int(degenerate.sum()))
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(degenerate, 0.0, vxy / vxx)
        b = np.where(n > 0, (stats.s_z - a * stats.s_theta) / n, 0.0)
    return a, b


def m_step_item_accuracy(stats: SaSufficientStats, j: int) -> tuple[float, float]:
    if not stats.n[j] > 0:
        raise ValueError(f"item {j} has no observations")
    a, b = m_step_accuracy(stats)
    return float(a[j]), float(b[j])


def m_step_cot(stats: SaSufficientStats) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Regression of log T on -tau per item; lam is the mean squared residual."""
    n = stats.n
    vxx, vxy = _centred(n, stats.s_tau, stats.s_tau2, stats.s_l, stats.s_ltau)
    degenerate = ~(vxx / np.maximum(n, 1) > VAR_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.where(degenerate, 0.0, -vxy / vxx)
        omega = np.where(n > 0, (stats.s_l + phi * stats.s_tau) / n, 0.0)
        # sum (l - omega + phi tau)^2, expanded in the sufficient statistics
        sse = (stats.s_l2 + n * omega**2 + phi**2 * stats.s_tau2
               - 2 * omega * stats.s_l + 2 * phi * stats.s_ltau - 2 * omega * phi * stats.s_tau)
        lam = np.where(n > 0, sse / n, 1.0)
    return omega, phi, np.maximum(lam, LAM_FLOOR)


def m_step_item_cot(stats: SaSufficientStats, j: int) -> tuple[float, float, float]:
    if not stats.n[j] > 0:
        raise ValueError(f"item {j} has no observations")
    omega, phi, lam = m_step_cot(stats)
    return float(omega[j]), float(phi[j]), float(lam[j])


def rho_profile(rho, s_tt: float, s_uu: float, s_tu: float, n: int):
    """Expected prior log density of the latent pairs as a function of rho."""
    rho = np.asarray(rho, dtype=float)
    one_m = 1.0 - rho * rho
    return -0.5 * n * np.log(one_m) - (s_tt - 2 * rho * s_tu + s_uu) / (2 * one_m)


def m_step_rho(stats: SaSufficientStats | None = None, n: int | None = None, *,
               s_tt: float | None = None, s_uu: float | None = None, s_tu: float | None = None) -> float:
    """Maximiser of the rho profile: the best root in (-1, 1) of
    N r^3 - S_tu r^2 + (S_tt + S_uu - N) r - S_tu = 0, clamped to +-0.999."""
    if stats is not None:
        s_tt, s_uu, s_tu = stats.s_tt, stats.s_uu, stats.s_tu
        n = stats.n_subjects if n is None else n
    roots = np.roots([n, -s_tu, s_tt + s_uu - n, -s_tu])
    real = roots[np.abs(roots.imag) < 1e-9].real
    inside = real[(real > -1) & (real < 1)]
    if inside.size == 0:
        log.warning("no stationary point of the rho profile inside (-1, 1); using the sample correlation")
        r = s_tu / np.sqrt(s_tt * s_uu) if s_tt > 0 and s_uu > 0 else 0.0
        return float(np.clip(r, -RHO_CLAMP, RHO_CLAMP))
    best = inside[np.argmax(rho_profile(inside, s_tt, s_uu, s_tu, n))]
    return float(np.clip(best, -RHO_CLAMP, RHO_CLAMP))


def m_step(stats: SaSufficientStats, template: PopulationParams, mode: str) -> PopulationParams:
    a, b = m_step_accuracy(stats)
    if mode == "irt":
        j = a.size
        return PopulationParams(a, b, np.zeros(j), np.zeros(j), np.ones(j), 0.0,
                                item_ids=list(template.item_ids), mode="irt")
    omega, phi, lam = m_step_cot(stats)
    rho = m_step_rho(stats)
    return PopulationParams(a, b, omega, phi, lam, rho, item_ids=list(template.item_ids))


def expand_rescale(params: PopulationParams, stats: SaSufficientStats) -> PopulationParams:
    """Parameter-expansion step: map the averaged latent location/scale back to N(0, 1).

    The averaged draws imply theta ~ (m, s^2); substituting theta = m + s theta'
    gives a' = s a, b' = b + a m (likewise for tau with omega' = omega - phi m),
    and rho is refit on the standardised cross moments.  Fixed points are
    those of the plain update, but the latent scale no longer lags behind.
    """
    n = stats.n_subjects
    a, b = params.a, params.b
    cnt = np.maximum(stats.n, 1)
    resid = (stats.s_z2 - 2 * a * stats.s_ztheta - 2 * b * stats.s_z + a * a * stats.s_theta2
             + 2 * a * b * stats.s_theta + b * b * stats.n) / cnt
    scale = np.sqrt(np.where(resid > VAR_FLOOR, resid, 1.0))
    a, b = a / scale, b / scale
    m_t = stats.s_t / n
    v_t = stats.s_tt / n - m_t * m_t
    if not v_t > VAR_FLOOR:
        return params.copy(a=a, b=b)
    s_t = np.sqrt(v_t)
    a, b = a * s_t, b + a * m_t
    if params.mode == "irt":
        return params.copy(a=a, b=b)
    m_u = stats.s_u / n
    v_u = stats.s_uu / n - m_u * m_u
    if not v_u > VAR_FLOOR:
        return params.copy(a=a, b=b)
    s_u = np.sqrt(v_u)
    c = (stats.s_tu / n - m_t * m_u) / (s_t * s_u)
    rho = m_step_rho(n=n, s_tt=float(n), s_uu=float(n), s_tu=n * c)
    return params.copy(a=a, b=b, omega=params.omega - params.phi * m_u, phi=params.phi * s_u, rho=rho)


def q_tilde(stats: SaSufficientStats, params: PopulationParams) -> float:
    """Averaged complete-data objective at ``params`` (terms free of params dropped)."""
    a, b = params.a, params.b
    n = stats.n
    acc = -0.5 * np.sum(-2 * a * stats.s_ztheta - 2 * b * stats.s_z
                        + a * a * stats.s_theta2 + 2 * a * b * stats.s_theta + b * b * n)
    if params.mode == "irt":
        return float(acc - 0.5 * stats.s_tt)
    om, ph, lam = params.omega, params.phi, params.lam
    sse = (stats.s_l2 + n * om**2 + ph**2 * stats.s_tau2
           - 2 * om * stats.s_l + 2 * ph * stats.s_ltau - 2 * om * ph * stats.s_tau)
    cot = np.sum(-0.5 * n * np.log(lam) - sse / (2 * lam))
    prior = rho_profile(params.rho, stats.s_tt, stats.s_uu, stats.s_tu, stats.n_subjects)
    return float(acc + cot + prior)


# ---------------------------------------------------------------- orientation


def orientation_fix(params: PopulationParams, traits: LatentTraits | None = None):
    """Flip signs so that sum(a) > 0 and sum(phi) > 0.

    Flipping (a, theta) or (phi, tau) negates rho; flipping both leaves it.
    The complete-data log posterior is unchanged.
    """
    p = params.copy()
    s_acc = -1.0 if p.a.sum() < 0 else 1.0
    s_cot = -1.0 if p.mode == "lart" and p.phi.sum() < 0 else 1.0
    p.a = s_acc * p.a
    p.phi = s_cot * p.phi
    p.rho = s_acc * s_cot * p.rho + 0.0
    if traits is None:
        return p, None
    info = None
    if traits.info is not None:
        flip = np.array([s_acc, s_cot])
        info = traits.info * np.outer(flip, flip)
    return p, LatentTraits(s_acc * np.asarray(traits.theta), s_cot * np.asarray(traits.tau), info)


# ---------------------------------------------------------------- S-step


def _block_draw(params, R, log_t, mask, stream: RngStream, mode: str):
    bf = batch_factors(params, R, log_t, mask)
    theta = sample_theta_batch(stream, bf)
    if mode == "irt":
        tau = np.zeros_like(theta)
    else:
        tau = sample_tau_given_theta(stream, bf, theta)
    Z = sample_probit_augmentation(stream, params, theta, R, mask)
    return theta, tau, Z


def s_step(params: PopulationParams, data: ResponseDataset, iteration: int, cfg: FitConfig,
           pool: ThreadPoolExecutor | None = None):
    """Draw latent variables for all subjects; returns (stats averaged over C draws, last theta, last tau).

    Subjects are processed in fixed blocks, each with its own stream keyed by
    (iteration, block, draw), so results do not depend on the worker count.
    """
    n = data.n_subjects
    log_t = data.log_t
    mask = data.observed
    blocks = [slice(lo, min(lo + BLOCK_SIZE, n)) for lo in range(0, n, BLOCK_SIZE)]

    def run(args):
        bi, c = args
        sl = blocks[bi]
        stream = RngStream(cfg.seed, (iteration, bi, c))
        th, ta, Z = _block_draw(params, data.R[sl], log_t[sl], mask[sl], stream, cfg.mode)
        return th, ta, SaSufficientStats.from_draws(th, ta, Z, log_t[sl], mask[sl])

    jobs = [(bi, c) for c in range(cfg.mc_samples) for bi in range(len(blocks))]
    results = list(pool.map(run, jobs)) if pool is not None else [run(j) for j in jobs]
    total = None
    for _, _, st in results:
        total = st if total is None else total + st
    total = total.scaled(1.0 / cfg.mc_samples)
    total.n_subjects = n
    last = results[-len(blocks):]
    theta = np.concatenate([r[0] for r in last])
    tau = np.concatenate([r[1] for r in last])
    return total, theta, tau


# ---------------------------------------------------------------- driver


def _as_mode(params: PopulationParams, mode: str) -> PopulationParams:
    if mode == "irt" and params.mode != "irt":
        j = params.n_items
        return PopulationParams(params.a, params.b, np.zeros(j), np.zeros(j), np.ones(j), 0.0,
                                item_ids=list(params.item_ids), mode="irt")
    return params.copy()


def saem_fit(data: ResponseDataset, init, cfg: FitConfig | None = None) -> FitResult:
    """Fit the population parameters by SAEM starting from ``init``.

    ``init`` is a ``(PopulationParams, LatentTraits)`` pair (traits may be
    ``None``) or bare ``PopulationParams``.
    """
    cfg = cfg or FitConfig()
    params0 = init[0] if isinstance(init, tuple) else init
    if params0.n_items != data.n_items:
        raise ValueError("init and data disagree on the number of items")
    params = _as_mode(params0, cfg.mode)
    params.check()
    stats = None
    trace: list[TraceRecord] = []
    changes: list[float] = []
    converged = False
    theta = tau = None
    n_workers = worker_count(cfg.workers)
    pool = ThreadPoolExecutor(n_workers) if n_workers > 1 else None
    try:
        for t in range(1, cfg.max_iters + 1):
            alpha = cfg.alpha(t)
            try:
                current, theta, tau = s_step(params, data, t, cfg, pool)
            except SamplingError as exc:
                raise SamplingError(f"S-step failed at iteration {t}: {exc}") from exc
            stats = current if stats is None else stats.update(current, alpha)
            new = m_step(stats, params, cfg.mode)
            if cfg.expand:
                new = expand_rescale(new, stats)
            obj = q_tilde(stats, new)
            if not np.isfinite(obj):
                raise FloatingPointError(f"non-finite objective at iteration {t}")
            change = float(np.max(np.abs(new.vector() - params.vector())))
            params = new
            changes.append(change)
            trace.append(TraceRecord(t, alpha, float(np.linalg.norm(params.vector())), obj, change))
            if len(changes) >= cfg.window and np.mean(changes[-cfg.window:]) < cfg.tol:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    draws = LatentTraits(theta, tau)
    params, draws = orientation_fix(params, draws)
    return FitResult(params, trace, converged, len(trace), stats, draws, cfg.seed, cfg.tol)


def fit_irt_baseline(data: ResponseDataset, init, cfg: FitConfig | None = None) -> FitResult:
    """Accuracy-only SAEM (rho fixed at 0, lengths ignored)."""
    cfg = cfg or FitConfig()
    cfg = FitConfig(**{f.name: getattr(cfg, f.name) for f in fields(cfg) if f.name != "mode"}, mode="irt")
    return saem_fit(data, init, cfg)
