"""Per-subject MAP scoring, posterior information and asymptotic intervals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .kernels import inv_mills, std_normal_quantile
from .model import LatentTraits, PopulationParams, ResponseDataset

GRAD_TOL = 1e-10
MAX_NEWTON = 200


class ConvergenceError(RuntimeError):
    pass


@dataclass
class TraitEstimate:
    theta_hat: float
    tau_hat: float
    info: np.ndarray
    ci_level: float
    theta_ci: tuple[float, float]
    tau_ci: tuple[float, float]


@dataclass
class Scores:
    """Batch scoring output: MAP estimates, information matrices and intervals."""

    theta: np.ndarray
    tau: np.ndarray
    info: np.ndarray
    theta_lo: np.ndarray
    theta_hi: np.ndarray
    tau_lo: np.ndarray
    tau_hi: np.ndarray
    level: float

    def traits(self) -> LatentTraits:
        return LatentTraits(self.theta, self.tau, self.info)


def _prep(params, R, log_t, mask):
    R = np.atleast_2d(np.asarray(R))
    log_t = np.atleast_2d(np.asarray(log_t, dtype=float))
    mask = np.ones(R.shape, dtype=bool) if mask is None else np.atleast_2d(np.asarray(mask, dtype=bool))
    sign = np.where(mask, 2.0 * R - 1.0, 0.0)
    y = np.where(mask, log_t - params.omega, 0.0)
    return sign, y, mask


def _objective(params, sign, y, mask, theta, tau, cot: bool):
    rho = params.rho
    one_m = 1.0 - rho * rho
    u = sign * (theta[:, None] * params.a + params.b)
    f = np.sum(np.where(mask, special.log_ndtr(np.where(mask, u, 0.0)), 0.0), axis=1)
    if cot:
        r = y + tau[:, None] * params.phi
        f -= np.sum(np.where(mask, r * r, 0.0) / (2 * params.lam), axis=1)
    return f - (theta**2 - 2 * rho * theta * tau + tau**2) / (2 * one_m)


def _grad_hess(params, sign, y, mask, theta, tau, cot: bool):
    rho = params.rho
    one_m = 1.0 - rho * rho
    u = np.where(mask, sign * (theta[:, None] * params.a + params.b), 0.0)
    h = inv_mills(u)
    g_t = np.sum(np.where(mask, sign * params.a * h, 0.0), axis=1) - (theta - rho * tau) / one_m
    h_tt = -np.sum(np.where(mask, params.a**2 * h * (u + h), 0.0), axis=1) - 1.0 / one_m
    g_u = -(tau - rho * theta) / one_m
    h_uu = np.full_like(theta, -1.0 / one_m)
    if cot:
        r = y + tau[:, None] * params.phi
        g_u -= np.sum(np.where(mask, params.phi * r / params.lam, 0.0), axis=1)
        h_uu -= mask @ (params.phi**2 / params.lam)
    h_tu = np.full_like(theta, rho / one_m)
    return g_t, g_u, h_tt, h_uu, h_tu


def map_estimate_batch(params: PopulationParams, R, log_t, mask=None) -> tuple[np.ndarray, np.ndarray]:
    """MAP (theta, tau) for every row by damped Newton on the concave log posterior."""
    params.check()
    sign, y, mask = _prep(params, R, log_t, mask)
    cot = params.mode == "lart"
    n = sign.shape[0]
    theta = np.zeros(n)
    tau = np.zeros(n)
    f = _objective(params, sign, y, mask, theta, tau, cot)
    for _ in range(MAX_NEWTON):
        g_t, g_u, h_tt, h_uu, h_tu = _grad_hess(params, sign, y, mask, theta, tau, cot)
        gnorm = np.maximum(np.abs(g_t), np.abs(g_u))
        if np.all(gnorm < GRAD_TOL):
            return theta, tau
        det = h_tt * h_uu - h_tu * h_tu
        d_t = -(h_uu * g_t - h_tu * g_u) / det
        d_u = -(h_tt * g_u - h_tu * g_t) / det
        active = gnorm >= GRAD_TOL
        d_t = np.where(active, d_t, 0.0)
        d_u = np.where(active, d_u, 0.0)
        step = np.ones(n)
        for _ in range(60):
            cand_t = theta + step * d_t
            cand_u = tau + step * d_u
            f_c = _objective(params, sign, y, mask, cand_t, cand_u, cot)
            # slack for rounding: near the optimum the objective gain is below ulp(f)
            worse = f_c < f - 1e-13 * (1.0 + np.abs(f))
            if not worse.any():
                break
            step = np.where(worse, 0.5 * step, step)
        theta, tau, f = cand_t, cand_u, f_c
    g_t, g_u, *_ = _grad_hess(params, sign, y, mask, theta, tau, cot)
    bad = np.maximum(np.abs(g_t), np.abs(g_u)) >= GRAD_TOL
    if bad.any():
        worst = int(np.argmax(np.maximum(np.abs(g_t), np.abs(g_u))))
        raise ConvergenceError(
            f"MAP did not converge for {int(bad.sum())} subject(s) in {MAX_NEWTON} Newton steps; "
            f"worst row {worst} has gradient ({g_t[worst]:.3g}, {g_u[worst]:.3g})"
        )
    return theta, tau


def map_estimate(params: PopulationParams, r_row, logT_row, mask=None) -> tuple[float, float]:
    theta, tau = map_estimate_batch(params, np.asarray(r_row).reshape(1, -1),
                                    np.asarray(logT_row, dtype=float).reshape(1, -1),
                                    None if mask is None else np.asarray(mask).reshape(1, -1))
    return float(theta[0]), float(tau[0])


def item_information(params: PopulationParams, theta) -> np.ndarray:
    """a_j^2 phi(m)^2 / (Phi(m) (1 - Phi(m))) with m = a_j theta + b_j; shape (..., J)."""
    m = np.multiply.outer(np.asarray(theta, dtype=float), params.a) + params.b
    return params.a**2 * inv_mills(m) * inv_mills(-m)


def information_matrix_batch(params: PopulationParams, theta, mask=None) -> np.ndarray:
    """Posterior information at theta for each subject; returns (N, 2, 2)."""
    rho = params.rho
    if not abs(rho) < 1:
        raise ValueError("|rho| must be < 1")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    n = theta.shape[0]
    mask = np.ones((n, params.n_items), dtype=bool) if mask is None else np.atleast_2d(np.asarray(mask, dtype=bool))
    one_m = 1.0 - rho * rho
    acc = np.sum(np.where(mask, item_information(params, theta), 0.0), axis=1)
    cot = mask @ (params.phi**2 / params.lam) if params.mode == "lart" else np.zeros(n)
    out = np.empty((n, 2, 2))
    out[:, 0, 0] = 1.0 / one_m + acc
    out[:, 1, 1] = 1.0 / one_m + cot
    out[:, 0, 1] = out[:, 1, 0] = -rho / one_m
    return out


def information_matrix(params: PopulationParams, theta: float, mask=None) -> np.ndarray:
    m = None if mask is None else np.asarray(mask).reshape(1, -1)
    return information_matrix_batch(params, [theta], m)[0]


def confidence_interval(est, info, level: float = 0.95) -> TraitEstimate:
    """Normal-approximation intervals from the inverse information diagonal."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    info = np.asarray(info, dtype=float)
    if np.linalg.det(info) <= 0 or info[0, 0] <= 0:
        raise np.linalg.LinAlgError("information matrix is not positive definite")
    cov = np.linalg.inv(info)
    z = std_normal_quantile(0.5 * (1 + level))
    th, ta = float(est[0]), float(est[1])
    ht = z * np.sqrt(cov[0, 0])
    hu = z * np.sqrt(cov[1, 1])
    return TraitEstimate(th, ta, info, level, (th - ht, th + ht), (ta - hu, ta + hu))


def score(params: PopulationParams, data: ResponseDataset, level: float = 0.95) -> Scores:
    """MAP, information and intervals for every subject in ``data``."""
    mask = data.observed
    theta, tau = map_estimate_batch(params, data.R, data.log_t, mask)
    info = information_matrix_batch(params, theta, mask)
    det = info[:, 0, 0] * info[:, 1, 1] - info[:, 0, 1] ** 2
    var_t = info[:, 1, 1] / det
    var_u = info[:, 0, 0] / det
    z = std_normal_quantile(0.5 * (1 + level))
    ht, hu = z * np.sqrt(var_t), z * np.sqrt(var_u)
    return Scores(theta, tau, info, theta - ht, theta + ht, tau - hu, tau + hu, level)
