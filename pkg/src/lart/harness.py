"""Synthetic data generation and the evaluation experiments."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .cat import run_cat_batch
from .kernels import RngStream, std_normal_cdf
from .model import LatentTraits, PopulationParams, ResponseDataset
from .saem import FitConfig, FitResult, orientation_fix, saem_fit, worker_count
from .spectral import spectral_initialize
from .traits import map_estimate_batch, score


# stream ids for the experiment-level random choices (data streams use 0)
_INIT_STREAM, _PRED_STREAM, _VALID_STREAM, _PERM_STREAM = 101, 102, 103, 104


@dataclass(frozen=True)
class Law:
    """A scalar sampling law: ``uniform(lo, hi)``, ``normal(mean, var)`` or ``const(value)``."""

    kind: str
    p1: float
    p2: float = 0.0

    def __post_init__(self):
        if self.kind not in ("uniform", "normal", "const"):
            raise ValueError(f"unknown law {self.kind!r}")
        if self.kind == "uniform" and not self.p1 <= self.p2:
            raise ValueError("uniform law needs lo <= hi")
        if self.kind == "normal" and self.p2 < 0:
            raise ValueError("normal law needs a non-negative variance")

    def draw(self, gen: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "uniform":
            return gen.uniform(self.p1, self.p2, size)
        if self.kind == "normal":
            return gen.normal(self.p1, np.sqrt(self.p2), size)
        return np.full(size, float(self.p1))

    @classmethod
    def parse(cls, text: str) -> "Law":
        """``"uniform:0.5,1"``, ``"normal:0,0.5"`` or ``"const:0"``."""
        kind, _, args = text.partition(":")
        vals = [float(v) for v in args.split(",") if v.strip()]
        if not 1 <= len(vals) <= 2:
            raise ValueError(f"cannot parse law {text!r}")
        return cls(kind.strip(), *vals)


@dataclass
class SimConfig:
    n_subjects: int = 500
    n_items: int = 50
    rho_true: float = -0.8
    seed: int = 0
    law_a: Law = field(default_factory=lambda: Law("uniform", 0.5, 1.0))
    law_b: Law = field(default_factory=lambda: Law("normal", 0.0, 0.5))
    law_omega: Law = field(default_factory=lambda: Law("normal", 0.0, 1.0))
    law_phi: Law = field(default_factory=lambda: Law("uniform", 0.5, 1.5))
    law_lam: Law = field(default_factory=lambda: Law("uniform", 0.5, 2.0))
    n_replications: int = 50
    round_lengths: bool = False

    def __post_init__(self):
        if self.n_subjects < 1 or self.n_items < 0:
            raise ValueError("need n_subjects >= 1 and n_items >= 0")
        if not abs(self.rho_true) < 1:
            raise ValueError("|rho_true| must be < 1")

    def replicate(self, rep: int) -> "SimConfig":
        """Config for replication ``rep``: same laws, seed derived from (seed, rep)."""
        seed = int(np.random.SeedSequence(self.seed, spawn_key=(rep,)).generate_state(1)[0])
        return replace(self, seed=seed)


def gen_synthetic(cfg: SimConfig) -> tuple[ResponseDataset, tuple[PopulationParams, LatentTraits]]:
    """Draw item parameters, latent traits and the observed (R, T) matrices."""
    gen = RngStream(cfg.seed, 0).generator
    j, n = cfg.n_items, cfg.n_subjects
    a = cfg.law_a.draw(gen, j)
    b = cfg.law_b.draw(gen, j)
    omega = cfg.law_omega.draw(gen, j)
    phi = cfg.law_phi.draw(gen, j)
    lam = cfg.law_lam.draw(gen, j)
    if np.any(lam <= 0):
        raise ValueError("lambda law produced a non-positive variance")
    rho = cfg.rho_true
    chol = np.linalg.cholesky(np.array([[1.0, rho], [rho, 1.0]]))
    xi = gen.standard_normal((n, 2)) @ chol.T
    theta, tau = xi[:, 0], xi[:, 1]
    p = std_normal_cdf(np.outer(theta, a) + b)
    R = (gen.uniform(size=(n, j)) < p).astype(np.int64)
    log_t = omega - np.outer(tau, phi) + gen.standard_normal((n, j)) * np.sqrt(lam)
    T = np.exp(log_t)
    if cfg.round_lengths:
        T = np.maximum(np.rint(T), 1.0)
    truth = PopulationParams(a, b, omega, phi, lam, rho)
    data = ResponseDataset(R, T, item_ids=list(truth.item_ids))
    return data, (truth, LatentTraits(theta, tau))


# ---------------------------------------------------------------- fitting helpers


def scaled_distance(x, y) -> float:
    """||x - y|| / sqrt(len(x))."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return float(np.linalg.norm(d) / np.sqrt(d.size)) if d.size else 0.0


def random_init(data: ResponseDataset, seed: int) -> PopulationParams:
    """Random starting values of the kind used with a burn-in schedule."""
    gen = RngStream(seed, _INIT_STREAM).generator
    j = data.n_items
    return PopulationParams(gen.uniform(0.5, 1.5, j), gen.normal(0.0, 1.0, j), gen.normal(0.0, 1.0, j),
                            gen.uniform(0.5, 1.5, j), np.ones(j), 0.0, item_ids=list(data.item_ids))


def fit_model(data: ResponseDataset, mode: str = "lart", fit_cfg: FitConfig | None = None,
              init: str = "spectral") -> FitResult:
    """Initialise (spectral or random) and run SAEM in the requested mode."""
    cfg = replace(fit_cfg or FitConfig(), mode=mode)
    if init == "spectral":
        start = spectral_initialize(data)
    elif init == "random":
        start = random_init(data, cfg.seed)
    else:
        raise ValueError(f"unknown init {init!r}")
    return saem_fit(data, start, cfg)


def rmse_report(truth: tuple[PopulationParams, LatentTraits], fitted: PopulationParams,
                traits: LatentTraits | None = None) -> dict[str, float]:
    """Per-parameter RMSE (absolute error for rho) after orienting both sides.

    CoT entries are nan for an irt-mode fit; a Kendall rank correlation of
    theta is added as a supplementary entry when traits are given.
    """
    t_params, t_traits = orientation_fix(*truth)
    f_params, f_traits = orientation_fix(fitted, traits)
    if t_params.n_items != f_params.n_items:
        raise ValueError("truth and fit have different numbers of items")

    def rmse(x, y):
        return float(np.sqrt(np.mean((np.asarray(x) - np.asarray(y)) ** 2)))

    out = {"a": rmse(f_params.a, t_params.a), "b": rmse(f_params.b, t_params.b)}
    cot = f_params.mode == "lart"
    for name in ("omega", "phi", "lam"):
        out[name] = rmse(getattr(f_params, name), getattr(t_params, name)) if cot else float("nan")
    out["rho"] = abs(f_params.rho - t_params.rho) if cot else float("nan")
    if f_traits is not None:
        if f_traits.theta.shape != t_traits.theta.shape:
            raise ValueError("truth and estimated traits are misaligned")
        out["theta"] = rmse(f_traits.theta, t_traits.theta)
        out["tau"] = rmse(f_traits.tau, t_traits.tau) if cot else float("nan")
        out["theta_kendall"] = float(stats.kendalltau(f_traits.theta, t_traits.theta)[0])
    return out


def _pool_map(fn, items, workers: int | None):
    items = list(items)
    n = worker_count(workers)
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(n) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- simulation study


@dataclass
class ReplicationSummary:
    n_subjects: int
    mode: str
    rmse: list[dict[str, float]]

    def mean(self) -> dict[str, float]:
        keys = self.rmse[0].keys()
        return {k: float(np.mean([r[k] for r in self.rmse])) for k in keys}


def replication_study(cfg: SimConfig, sizes=(100, 200, 500), fit_cfg: FitConfig | None = None,
                      modes=("lart", "irt"), workers: int | None = None) -> list[ReplicationSummary]:
    """Fit every replication at every sample size in every mode; one summary per (N, mode)."""
    fit_cfg = fit_cfg or FitConfig()

    def one(args):
        n, rep = args
        data, truth = gen_synthetic(replace(cfg, n_subjects=n).replicate(rep))
        row = {}
        for mode in modes:
            res = fit_model(data, mode, replace(fit_cfg, workers=1))
            sc = score(res.params, data)
            row[mode] = rmse_report(truth, res.params, sc.traits())
        return n, row

    jobs = [(n, rep) for n in sizes for rep in range(cfg.n_replications)]
    results = _pool_map(one, jobs, workers)
    out = []
    for n in sizes:
        for mode in modes:
            out.append(ReplicationSummary(n, mode, [row[mode] for m, row in results if m == n]))
    return out


# ---------------------------------------------------------------- desiderata experiments


def _fit_pair(data, fit_cfg, modes=("lart", "irt")):
    return {m: fit_model(data, m, fit_cfg).params for m in modes}


def predictive_power(data: ResponseDataset, n_folds: int = 5, split_seed: int = 0,
                     n_train: int | None = None, fit_cfg: FitConfig | None = None) -> dict:
    """Held-out item prediction error (MAE) for LaRT and IRT.

    Subjects are split into a training set, used to fit the population
    parameters, and a test set.  Test items are partitioned into ``n_folds``
    folds; each fold is predicted from MAP traits computed on the other folds.
    """
    if not data.complete:
        raise ValueError("predictive_power needs complete data")
    n, j = data.R.shape
    if j < n_folds or n_folds < 2:
        raise ValueError("need 2 <= n_folds <= J")
    gen = RngStream(split_seed, _PRED_STREAM).generator
    perm = gen.permutation(n)
    n_train = n_train if n_train is not None else int(round(0.8 * n))
    if not 2 <= n_train < n:
        raise ValueError("training set must leave at least one test subject")
    train, test = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    folds = np.array_split(gen.permutation(j), n_folds)
    fits = _fit_pair(data.subset(train), fit_cfg)
    R = data.R[test]
    log_t = data.log_t[test]
    report = {"folds": [], "n_train": int(n_train), "n_test": int(test.size)}
    for k, held in enumerate(folds):
        mask = np.ones((test.size, j), dtype=bool)
        mask[:, held] = False
        row = {"fold": k + 1}
        for mode, params in fits.items():
            theta, _ = map_estimate_batch(params, R, log_t, mask)
            pred = std_normal_cdf(np.outer(theta, params.a[held]) + params.b[held])
            row[mode] = float(np.mean(np.abs(R[:, held] - pred)))
        report["folds"].append(row)
    report["average"] = {m: float(np.mean([f[m] for f in report["folds"]])) for m in fits}
    return report


def item_efficiency_curve(data: ResponseDataset, fits: dict[str, PopulationParams], n_init: int = 10,
                          budget: int | None = None) -> dict:
    """Scaled distance between CAT-stage theta estimates and the all-item estimate.

    ``fits`` maps a method name to its population parameters.  The first
    ``n_init`` items are given to everyone; further items are chosen by
    maximum information at the current estimate.
    """
    if not data.complete:
        raise ValueError("item efficiency needs complete data")
    j = data.n_items
    budget = j if budget is None else budget
    init = list(range(min(n_init, budget)))
    out = {"n_items": list(range(len(init), budget + 1))}
    for name, params in fits.items():
        full, _ = map_estimate_batch(params, data.R, data.log_t)
        path = run_cat_batch(params, data.R, data.log_t, init, budget)
        out[name] = [scaled_distance(path[:, k], full) for k in range(path.shape[1])]
    return out


def validity_variance(data: ResponseDataset, n_splits: int = 5, split_seed: int = 0,
                      fit_cfg: FitConfig | None = None, splits=None) -> dict[str, float]:
    """Sum over subjects of the across-split variance of theta-hat.

    Each disjoint item set is fitted and scored separately.  ``splits`` may
    supply the item index sets directly.
    """
    if splits is None:
        if not 1 <= n_splits <= data.n_items:
            raise ValueError("cannot split the items into that many nonempty sets")
        gen = RngStream(split_seed, _VALID_STREAM).generator
        splits = np.array_split(gen.permutation(data.n_items), n_splits)
    thetas: dict[str, list[np.ndarray]] = {"lart": [], "irt": []}
    for items in splits:
        sub = data.subset(items=np.sort(np.asarray(items)))
        for mode, params in _fit_pair(sub, fit_cfg).items():
            thetas[mode].append(map_estimate_batch(params, sub.R, sub.log_t)[0])
    return {m: float(np.sum(np.var(np.stack(v), axis=0, ddof=1))) if len(v) > 1 else 0.0
            for m, v in thetas.items()}


def llm_efficiency(data: ResponseDataset, sizes, perm_seed: int = 0, fit_cfg: FitConfig | None = None) -> dict:
    """Scaled distance of (a-hat, b-hat) on nested subject subsets to the full-sample fit."""
    sizes = [int(s) for s in sizes]
    if sorted(set(sizes)) != sizes or sizes[-1] != data.n_subjects or sizes[0] < 2:
        raise ValueError("sizes must be increasing, at least 2, and end at N")
    order = RngStream(perm_seed, _PERM_STREAM).generator.permutation(data.n_subjects)
    fits = {n: _fit_pair(data.subset(np.sort(order[:n])), fit_cfg) for n in sizes}
    full = fits[sizes[-1]]
    out = {"sizes": sizes}
    for mode in ("lart", "irt"):
        out[mode] = {
            "a": [scaled_distance(fits[n][mode].a, full[mode].a) for n in sizes],
            "b": [scaled_distance(fits[n][mode].b, full[mode].b) for n in sizes],
        }
    return out


def degenerate_column_experiment(cfg: SimConfig | None = None, item: int = 0,
                                 fit_cfg: FitConfig | None = None) -> dict:
    """Small-N fit with one item answered correctly by all but one subject.

    The single failure is given to the subject with the lowest true ability,
    so the item nearly separates the sample.  Returns |b-hat| and |a-hat| of
    that item under both methods.
    """
    cfg = cfg or SimConfig(n_subjects=50, round_lengths=False)
    data, truth = gen_synthetic(cfg)
    R = data.R.copy()
    R[:, item] = 1
    R[int(np.argmin(truth[1].theta)), item] = 0
    data = ResponseDataset(R, data.T, data.subject_ids, data.item_ids)
    fits = _fit_pair(data, fit_cfg)
    return {m: {"abs_b": float(abs(p.b[item])), "abs_a": float(abs(p.a[item]))} for m, p in fits.items()}


def init_comparison(cfg: SimConfig, fit_cfg: FitConfig | None = None, workers: int | None = None) -> dict:
    """Paired RMSE of spectral-init SAEM (decaying steps) vs random-init SAEM with burn-in."""
    fit_cfg = fit_cfg or FitConfig()

    def one(rep):
        data, truth = gen_synthetic(cfg.replicate(rep))
        base = replace(fit_cfg, seed=fit_cfg.seed + rep, workers=1)
        spectral = fit_model(data, "lart", replace(base, step_schedule="decay"), init="spectral")
        burn = fit_model(data, "lart", replace(base, step_schedule="burn-in"), init="random")
        return rmse_report(truth, spectral.params), rmse_report(truth, burn.params)

    pairs = _pool_map(one, range(cfg.n_replications), workers)
    keys = ("a", "b", "omega", "phi", "lam", "rho")
    return {
        "spectral": {k: [p[0][k] for p in pairs] for k in keys},
        "burn_in": {k: [p[1][k] for p in pairs] for k in keys},
    }


def outlier_count(values, factor: float = 5.0, reference: float | None = None) -> int:
    """Entries above ``factor`` times the reference (default: their own median)."""
    v = np.asarray(values, dtype=float)
    ref = np.median(v) if reference is None else reference
    return int(np.sum(v > factor * ref))
