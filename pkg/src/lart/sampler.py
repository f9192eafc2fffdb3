"""Exact posterior draws of (theta, tau) for fixed population parameters.

Integrating tau out of the joint posterior leaves a unified skew-normal for
theta: a normal kernel N(mu_theta, sigma_theta^2) tilted by one probit factor
per answered item.  Given theta, tau is normal.  Writing the standardised
ability as ``v = (theta - mu_theta) / sigma_theta`` the tilted density is

    p(v) ∝ phi(v) * prod_j Phi(c_j + g_j v),   g_j = sigma_theta * d1_j,
                                               c_j = d1_j mu_theta + d2_j,

with ``d1 = (2R - 1) a`` and ``d2 = (2R - 1) b``.  Everything below works with
these ``(c, g)`` vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .kernels import RngStream, SamplingError, sample_truncated_normal
from .model import PopulationParams

GRID_POINTS = 1024
GRID_HALF_WIDTH = 10.0
_NEWTON_STEPS = 60
_MAX_ROUNDS = 200


@dataclass
class PosteriorFactors:
    """Per-subject posterior quantities; array fields have one entry per item.

    ``mu_tau_coeff = (c1, c0)`` gives the conditional mean of tau as
    ``c1 * theta + c0``.  Unobserved items have ``d1 = d2 = 0`` and
    ``mask = False``.
    """

    mu_theta: float
    sigma_theta: float
    mu_tau_coeff: tuple[float, float]
    sigma_tau: float
    d1: np.ndarray
    d2: np.ndarray
    s_diag: np.ndarray
    mask: np.ndarray

    @property
    def shift(self) -> np.ndarray:
        """c_j = d1_j mu_theta + d2_j."""
        return self.d1 * self.mu_theta + self.d2


@dataclass
class BatchFactors:
    """Vectorised ``PosteriorFactors`` for N subjects (arrays of shape (N,) or (N, J))."""

    mu_theta: np.ndarray
    sigma_theta: np.ndarray
    c1: np.ndarray
    c0: np.ndarray
    sigma_tau: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    mask: np.ndarray

    def subject(self, i: int) -> PosteriorFactors:
        s = self.sigma_theta[i]
        return PosteriorFactors(
            mu_theta=float(self.mu_theta[i]),
            sigma_theta=float(s),
            mu_tau_coeff=(float(self.c1[i]), float(self.c0[i])),
            sigma_tau=float(self.sigma_tau[i]),
            d1=self.d1[i].copy(),
            d2=self.d2[i].copy(),
            s_diag=np.sqrt(s * s * self.d1[i] ** 2 + 1.0),
            mask=self.mask[i].copy(),
        )

    def rows(self, idx) -> "BatchFactors":
        return BatchFactors(*(getattr(self, f)[idx] for f in
                              ("mu_theta", "sigma_theta", "c1", "c0", "sigma_tau", "d1", "d2", "mask")))


def batch_factors(params: PopulationParams, R: np.ndarray, log_t: np.ndarray, mask: np.ndarray | None = None) -> BatchFactors:
    """Posterior factors for every row of ``R`` / ``log_t``."""
    R = np.atleast_2d(np.asarray(R))
    log_t = np.atleast_2d(np.asarray(log_t, dtype=float))
    mask = np.ones(R.shape, dtype=bool) if mask is None else np.atleast_2d(np.asarray(mask, dtype=bool))
    n = R.shape[0]
    sign = np.where(mask, 2.0 * R - 1.0, 0.0)
    d1 = sign * params.a
    d2 = sign * params.b
    if params.mode == "irt":
        ones = np.ones(n)
        return BatchFactors(np.zeros(n), ones, np.zeros(n), np.zeros(n), ones, d1, d2, mask)
    rho = params.rho
    one_m = 1.0 - rho * rho
    w = params.phi**2 / params.lam
    prec_tau = 1.0 / one_m + mask @ w
    var_tau = 1.0 / prec_tau
    # h = -sum_j (log T_ij - omega_j) phi_j / lam_j over observed items
    h = -np.sum(np.where(mask, (log_t - params.omega) * params.phi / params.lam, 0.0), axis=1)
    var_theta = 1.0 / (1.0 / one_m - var_tau * rho * rho / one_m**2)
    mu_theta = var_theta * h * var_tau * rho / one_m
    return BatchFactors(
        mu_theta=mu_theta,
        sigma_theta=np.sqrt(var_theta),
        c1=var_tau * rho / one_m,
        c0=var_tau * h,
        sigma_tau=np.sqrt(var_tau),
        d1=d1,
        d2=d2,
        mask=mask,
    )


def posterior_factors(params: PopulationParams, r_row, logT_row, mask=None) -> PosteriorFactors:
    params.check()
    r_row = np.asarray(r_row).reshape(1, -1)
    logT_row = np.asarray(logT_row, dtype=float).reshape(1, -1)
    m = None if mask is None else np.asarray(mask, dtype=bool).reshape(1, -1)
    return batch_factors(params, r_row, logT_row, m).subject(0)


# ---------------------------------------------------------------- tilted density


def _tilt_terms(v, c, g, mask):
    """log density, first and second derivative of the standardised tilt.

    ``v`` has shape (N,) or (N, K); ``c, g, mask`` have shape (N, J).
    """
    if v.ndim == 1:
        u = c + g * v[:, None]
    else:
        u = c[:, None, :] + g[:, None, :] * v[:, :, None]
    u = np.where(mask if v.ndim == 1 else mask[:, None, :], u, 0.0)
    logcdf = special.log_ndtr(u)
    ratio = np.exp(-0.5 * u * u - 0.5 * np.log(2 * np.pi) - logcdf)
    m = mask if v.ndim == 1 else mask[:, None, :]
    gg = g if v.ndim == 1 else g[:, None, :]
    ll = -0.5 * v * v + np.sum(np.where(m, logcdf, 0.0), axis=-1)
    d1 = -v + np.sum(np.where(m, gg * ratio, 0.0), axis=-1)
    d2 = -1.0 - np.sum(np.where(m, gg * gg * ratio * (u + ratio), 0.0), axis=-1)
    return ll, d1, d2


def _tilt_mode(c, g, mask):
    """Mode of the (strictly log-concave) tilted density, by damped Newton."""
    v = np.zeros(c.shape[0])
    ll, d1, d2 = _tilt_terms(v, c, g, mask)
    for _ in range(_NEWTON_STEPS):
        if np.all(np.abs(d1) < 1e-9):
            break
        step = -d1 / d2
        for _ in range(40):
            cand = v + step
            ll_c, d1_c, d2_c = _tilt_terms(cand, c, g, mask)
            worse = ll_c < ll - 1e-12 * np.abs(ll)
            if not worse.any():
                break
            step = np.where(worse, 0.5 * step, step)
        v = cand
        ll, d1, d2 = ll_c, d1_c, d2_c
    return v, ll, d1, d2


def _tilt_grid_cdf(c, g, mask):
    """Grid and normalised CDF of the tilted density for each row (mode +- 10, 1024 points)."""
    mode, *_ = _tilt_mode(c, g, mask)
    offs = np.linspace(-GRID_HALF_WIDTH, GRID_HALF_WIDTH, GRID_POINTS)
    grid = mode[:, None] + offs[None, :]
    ll, _, _ = _tilt_terms(grid, c, g, mask)
    dens = np.exp(ll - ll.max(axis=1, keepdims=True))
    cell = 0.5 * (dens[:, 1:] + dens[:, :-1])
    cdf = np.concatenate([np.zeros((c.shape[0], 1)), np.cumsum(cell, axis=1)], axis=1)
    cdf /= cdf[:, -1:]
    return grid, cdf


def _sample_tilt_grid(gen, c, g, mask, chunk=64):
    """One draw per row from the tilted density by inverse CDF on a grid."""
    n = c.shape[0]
    u = gen.random(n)
    out = np.empty(n)
    for lo in range(0, n, chunk):
        sl = slice(lo, min(lo + chunk, n))
        grid, cdf = _tilt_grid_cdf(c[sl], g[sl], mask[sl])
        for k in range(grid.shape[0]):
            out[lo + k] = np.interp(u[lo + k], cdf[k], grid[k])
    return out


def _sample_tilt_envelope(gen, c, g, mask):
    """One exact draw per row from the tilted density.

    Rejection from a three-tangent piecewise-exponential hull; tangents at the
    mode and one curvature scale either side.  Since the log density has
    second derivative <= -1 the outer slopes are bounded away from zero and the
    hull is always integrable.
    """
    n = c.shape[0]
    mode, _, _, d2m = _tilt_mode(c, g, mask)
    scale = 1.0 / np.sqrt(-d2m)
    x = np.stack([mode - scale, mode, mode + scale], axis=1)
    lx, sx, _ = _tilt_terms(x, c, g, mask)
    ref = lx[:, 1:2]
    lx = lx - ref
    # hull pieces meet where neighbouring tangents intersect
    z01 = (lx[:, 1] - lx[:, 0] - sx[:, 1] * x[:, 1] + sx[:, 0] * x[:, 0]) / (sx[:, 0] - sx[:, 1])
    z12 = (lx[:, 2] - lx[:, 1] - sx[:, 2] * x[:, 2] + sx[:, 1] * x[:, 1]) / (sx[:, 1] - sx[:, 2])
    # log masses of the three pieces
    h0 = lx[:, 0] + sx[:, 0] * (z01 - x[:, 0])          # hull height at z01
    h2 = lx[:, 2] + sx[:, 2] * (z12 - x[:, 2])          # hull height at z12
    logm0 = h0 - np.log(sx[:, 0])
    logm2 = h2 - np.log(-sx[:, 2])
    width = z12 - z01
    s1 = sx[:, 1]
    tiny = np.abs(s1 * width) < 1e-10
    with np.errstate(divide="ignore", invalid="ignore"):
        mid_factor = np.where(tiny, width, np.expm1(s1 * width) / np.where(tiny, 1.0, s1))
    logm1 = h0 + np.log(mid_factor)
    logm = np.stack([logm0, logm1, logm2], axis=1)
    probs = np.exp(logm - logm.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    cum = np.cumsum(probs, axis=1)

    out = np.empty(n)
    todo = np.arange(n)
    for _ in range(_MAX_ROUNDS):
        if todo.size == 0:
            return out
        k = todo.size
        piece = (gen.random(k)[:, None] > cum[todo, :2]).sum(axis=1)
        u = gen.random(k)
        v = np.empty(k)
        # piece 0: (-inf, z01], density ∝ exp(s0 v)
        p0 = piece == 0
        v[p0] = z01[todo[p0]] + np.log(u[p0]) / sx[todo[p0], 0]
        # piece 2: [z12, inf), density ∝ exp(s2 v)
        p2 = piece == 2
        v[p2] = z12[todo[p2]] + np.log(u[p2]) / sx[todo[p2], 2]
        # piece 1: [z01, z12], density ∝ exp(s1 v)
        p1 = piece == 1
        t = todo[p1]
        w1 = width[t]
        s = s1[t]
        flat = tiny[t]
        with np.errstate(divide="ignore", invalid="ignore"):
            curved = np.log1p(u[p1] * np.expm1(s * w1)) / np.where(flat, 1.0, s)
        v[p1] = z01[t] + np.where(flat, u[p1] * w1, curved)
        # hull value at v: min over tangents
        lines = lx[todo] + sx[todo] * (v[:, None] - x[todo])
        hull = lines.min(axis=1)
        target, _, _ = _tilt_terms(v, c[todo], g[todo], mask[todo])
        target = target - ref[todo, 0]
        accept = np.log(gen.random(k)) <= target - hull
        out[todo[accept]] = v[accept]
        todo = todo[~accept]
    raise SamplingError(f"theta sampler rejected {todo.size} draws {_MAX_ROUNDS} times in a row")


# ---------------------------------------------------------------- public draws


def _generator(rng):
    return rng.generator if isinstance(rng, RngStream) else rng


def sample_theta(rng, f: PosteriorFactors, size: int | None = None):
    """Draw theta for a single subject via the truncated-normal construction.

    theta = mu + sigma [U0 + sigma d1' (sigma^2 d1 d1' + I)^{-1} Y] where
    Y = sigma d1 V + W is the rank-1 decomposition of the truncated vector:
    V is drawn from its exact one-dimensional marginal (grid inverse CDF),
    then each W_j from a one-sided truncated normal.  ``size`` gives that
    many iid draws as an array.
    """
    gen = _generator(rng)
    n = 1 if size is None else int(size)
    mu, sig = f.mu_theta, f.sigma_theta
    obs = np.asarray(f.mask, dtype=bool)
    d1 = np.where(obs, f.d1, 0.0)
    c = np.where(obs, f.shift, 0.0)
    g = sig * d1
    dd = float(d1 @ d1)
    if dd == 0.0:
        out = mu + sig * gen.standard_normal(n)
    else:
        grid, cdf = _tilt_grid_cdf(c[None, :], g[None, :], obs[None, :])
        v = np.interp(gen.random(n), cdf[0], grid[0])
        w = np.zeros((n, d1.size))
        w[:, obs] = sample_truncated_normal(gen, 0.0, 1.0, -c[obs] - np.outer(v, g[obs]), np.inf)
        y = np.outer(v, g) + w
        denom = 1.0 + sig * sig * dd
        u0 = gen.standard_normal(n) / np.sqrt(denom)
        # Sherman-Morrison: d1' (s^2 d1 d1' + I)^{-1} = d1' / (1 + s^2 |d1|^2)
        out = mu + sig * (u0 + sig * (y @ d1) / denom)
    return float(out[0]) if size is None else out


def sample_theta_batch(rng, bf: BatchFactors, method: str = "envelope") -> np.ndarray:
    """One theta draw per subject; ``method`` is "envelope" (exact rejection) or "grid"."""
    gen = _generator(rng)
    c = np.where(bf.mask, bf.d1 * bf.mu_theta[:, None] + bf.d2, 0.0)
    g = np.where(bf.mask, bf.sigma_theta[:, None] * bf.d1, 0.0)
    active = np.any(bf.mask & (g != 0.0), axis=1)
    v = np.empty(c.shape[0])
    n_idle = int((~active).sum())
    if n_idle:
        v[~active] = gen.standard_normal(n_idle)
    if active.any():
        fn = _sample_tilt_envelope if method == "envelope" else _sample_tilt_grid
        v[active] = fn(gen, c[active], g[active], bf.mask[active])
    return bf.mu_theta + bf.sigma_theta * v


def sample_tau_given_theta(rng, f, theta):
    """tau | theta ~ N(c1 * theta + c0, sigma_tau^2); works for single or batch factors."""
    gen = _generator(rng)
    if isinstance(f, PosteriorFactors):
        c1, c0 = f.mu_tau_coeff
        return float(c1 * theta + c0 + f.sigma_tau * gen.standard_normal())
    theta = np.asarray(theta, dtype=float)
    return f.c1 * theta + f.c0 + f.sigma_tau * gen.standard_normal(theta.shape)


def sample_probit_augmentation(rng, params: PopulationParams, theta, R, mask=None) -> np.ndarray:
    """Latent utilities Z ~ N(a theta + b, 1) truncated to agree with the sign of 2R - 1.

    Accepts a single subject (scalar theta, 1-D R) or a batch (theta (N,), R (N, J)).
    Unobserved cells receive untruncated draws.
    """
    theta = np.asarray(theta, dtype=float)
    R = np.asarray(R)
    mean = np.multiply.outer(theta, params.a) + params.b
    obs = np.ones(R.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    lower = np.where(obs & (R == 1), 0.0, -np.inf)
    upper = np.where(obs & (R == 0), 0.0, np.inf)
    return np.asarray(sample_truncated_normal(rng, mean, 1.0, lower, upper))


# ---------------------------------------------------------------- quadrature oracles


@dataclass
class GridPosterior:
    grid: np.ndarray
    weights: np.ndarray
    mean: float
    sd: float

    def quantile(self, p):
        cdf = np.cumsum(self.weights)
        return np.interp(p, cdf - 0.5 * self.weights, self.grid)


def oracle_theta_grid(params: PopulationParams, r_row, logT_row, mask=None, n_grid: int = 4097) -> GridPosterior:
    """Deterministic quadrature of the theta posterior on mu_theta +- 10 sigma_theta.

    Density: N(theta; mu_theta, sigma_theta^2) * prod_j Phi((2R_j - 1)(a_j theta + b_j)),
    integrated by Simpson weights on a uniform grid.
    """
    if n_grid < 512:
        raise ValueError("n_grid must be at least 512")
    if n_grid % 2 == 0:
        n_grid += 1
    f = posterior_factors(params, r_row, logT_row, mask)
    grid = np.linspace(f.mu_theta - 10 * f.sigma_theta, f.mu_theta + 10 * f.sigma_theta, n_grid)
    r = np.asarray(r_row)
    obs = f.mask
    logd = -0.5 * ((grid - f.mu_theta) / f.sigma_theta) ** 2
    if obs.any():
        sign = 2.0 * r[obs] - 1.0
        logd = logd + special.log_ndtr(sign * (np.outer(grid, params.a[obs]) + params.b[obs])).sum(axis=1)
    simpson = np.ones(n_grid)
    simpson[1:-1:2] = 4.0
    simpson[2:-1:2] = 2.0
    w = simpson * np.exp(logd - logd.max())
    w /= w.sum()
    mean = float(w @ grid)
    sd = float(np.sqrt(w @ (grid - mean) ** 2))
    return GridPosterior(grid, w, mean, sd)


@dataclass
class JointGridPosterior:
    theta_grid: np.ndarray
    tau_grid: np.ndarray
    weights: np.ndarray  # (n_theta, n_tau)
    mean: np.ndarray     # (2,)
    cov: np.ndarray      # (2, 2)


def _joint_logdens(params, r_row, logT_row, mask, th, ta):
    rho = params.rho
    logd = -(th[:, None] ** 2 - 2 * rho * th[:, None] * ta[None, :] + ta[None, :] ** 2) / (2 * (1 - rho * rho))
    obs = np.ones(len(params.a), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    r = np.asarray(r_row)
    y = np.asarray(logT_row, dtype=float)
    if obs.any():
        sign = 2.0 * r[obs] - 1.0
        acc = special.log_ndtr(sign * (np.outer(th, params.a[obs]) + params.b[obs])).sum(axis=1)
        resid = y[obs][None, :] - params.omega[obs] + np.outer(ta, params.phi[obs])
        cot = -(resid**2 / (2 * params.lam[obs])).sum(axis=1)
        logd = logd + acc[:, None] + cot[None, :]
    return logd


def oracle_joint_grid(params: PopulationParams, r_row, logT_row, mask=None, n_grid: int = 801) -> JointGridPosterior:
    """Two-dimensional quadrature of the raw joint posterior of (theta, tau).

    Evaluates prior x likelihood directly (no use of the factorised form).  A
    coarse pass on [-10, 10]^2 locates the posterior; the fine pass covers
    mean +- 10 sd per coordinate.
    """
    def moments(th, ta):
        logd = _joint_logdens(params, r_row, logT_row, mask, th, ta)
        w = np.exp(logd - logd.max())
        w /= w.sum()
        mt = w.sum(axis=1) @ th
        mu = w.sum(axis=0) @ ta
        ctt = w.sum(axis=1) @ (th - mt) ** 2
        cuu = w.sum(axis=0) @ (ta - mu) ** 2
        ctu = np.sum(w * np.outer(th - mt, ta - mu))
        return w, np.array([mt, mu]), np.array([[ctt, ctu], [ctu, cuu]])

    coarse = np.linspace(-10, 10, 401)
    _, m0, c0 = moments(coarse, coarse)
    s0 = np.sqrt(np.maximum(np.diag(c0), 1e-8))
    th = np.linspace(m0[0] - 10 * s0[0], m0[0] + 10 * s0[0], n_grid)
    ta = np.linspace(m0[1] - 10 * s0[1], m0[1] + 10 * s0[1], n_grid)
    w, mean, cov = moments(th, ta)
    return JointGridPosterior(th, ta, w, mean, cov)
