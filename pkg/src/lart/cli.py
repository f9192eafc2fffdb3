"""Command-line interface: ``lart <command> ...``.

Exit status is 0 on success, 2 on usage errors and 1 on runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .cat import run_cat_batch
from .harness import Law, SimConfig
from .io import fit_meta, fmt, load_dataset, load_model, save_dataset, save_model, save_traits, truth_extra
from .model import marginal_moments, validate
from .saem import FitConfig, saem_fit
from .spectral import spectral_initialize
from .traits import map_estimate_batch, score

log = logging.getLogger("lart")


def _law(text: str) -> Law:
    try:
        return Law.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _unit_interval(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("must lie strictly between 0 and 1")
    return v


def _fit_cfg(args, mode: str = "lart") -> FitConfig:
    return FitConfig(max_iters=args.max_iters, tol=args.tol, seed=args.seed, mode=mode,
                     mc_samples=getattr(args, "samples", 1))


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n", encoding="utf-8")


def _complete(data, what: str):
    if not data.complete:
        raise ValueError(f"{what} needs every subject/item pair to be observed")
    problems = validate(data)
    if problems:
        raise ValueError(f"invalid dataset: {problems[0].reason}")
    return data


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> None:
    cfg = SimConfig(n_subjects=args.n, n_items=args.j, rho_true=args.rho, seed=args.seed,
                    round_lengths=args.round_lengths)
    for name in ("a", "b", "omega", "phi", "lam"):
        law = getattr(args, f"law_{name}")
        if law is not None:
            cfg = replace(cfg, **{f"law_{name}": law})
    data, (truth, traits) = harness.gen_synthetic(cfg)
    save_dataset(data, args.out)
    if args.truth:
        save_model(truth, {"seed": args.seed, "source": "simulate"}, args.truth, extra=truth_extra(data, traits))


def cmd_fit(args) -> None:
    data = _complete(load_dataset(args.data), "fit")
    cfg = _fit_cfg(args, args.mode)
    if args.no_spectral_init:
        init = harness.random_init(data, args.seed)
        cfg = replace(cfg, step_schedule="burn-in")
    else:
        init = spectral_initialize(data)
    res = saem_fit(data, init, cfg)
    save_model(res.params, fit_meta(args.seed, res.iters_run, args.tol, res.converged, data), args.out)


def cmd_score(args) -> None:
    data = load_dataset(args.data)
    model = load_model(args.model, data, strict=True)
    params = model.params
    if list(params.item_ids) != list(data.item_ids):
        lookup = {iid: k for k, iid in enumerate(data.item_ids)}
        unknown = [iid for iid in params.item_ids if iid not in lookup]
        if unknown or len(lookup) != params.n_items:
            raise ValueError("dataset items do not match the model's items")
        data = data.subset(items=[lookup[iid] for iid in params.item_ids])
    sc = score(params, data, args.ci)
    save_traits(args.out, data.subject_ids, sc)


def cmd_cat(args) -> None:
    data = _complete(load_dataset(args.data), "cat")
    params = load_model(args.model, data).params
    if params.n_items != data.n_items:
        raise ValueError("pool and model have different numbers of items")
    budget = args.budget or data.n_items
    init = list(range(min(args.init_items, budget)))
    full, _ = map_estimate_batch(params, data.R, data.log_t)
    path = run_cat_batch(params, data.R, data.log_t, init, budget)
    with Path(args.out).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_items", "scaled_distance"])
        for k in range(path.shape[1]):
            w.writerow([len(init) + k, fmt(harness.scaled_distance(path[:, k], full))])


def cmd_eval(args) -> None:
    fc = FitConfig(max_iters=args.max_iters, seed=args.seed)
    kind = args.kind
    if kind == "init-compare":
        cfg = SimConfig(n_subjects=args.n, seed=args.seed, n_replications=args.reps)
        report = harness.init_comparison(cfg, fc)
    else:
        if not args.data:
            raise ValueError(f"eval {kind} needs --data")
        data = _complete(load_dataset(args.data), f"eval {kind}")
        if kind == "predictive":
            report = harness.predictive_power(data, args.folds, args.seed, fit_cfg=fc)
        elif kind == "item-efficiency":
            fits = {m: harness.fit_model(data, m, fc).params for m in ("lart", "irt")}
            report = harness.item_efficiency_curve(data, fits, args.init_items)
        elif kind == "validity":
            report = harness.validity_variance(data, args.folds, args.seed, fit_cfg=fc)
        else:
            sizes = args.sizes or _default_sizes(data.n_subjects)
            report = harness.llm_efficiency(data, sizes, args.seed, fit_cfg=fc)
    _write_json(args.out, {"experiment": kind, "seed": args.seed, "result": report})


def _default_sizes(n: int) -> list[int]:
    return sorted({max(2, int(round(n * f))) for f in (0.35, 0.55, 0.7, 0.9)} | {n})


def cmd_moments(args) -> None:
    params = load_model(args.model).params
    m = marginal_moments(params)
    ids = params.item_ids
    with Path(args.out).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "item1", "item2", "value"])
        for name in ("p_correct", "mean_log_t", "var_log_t"):
            for j, iid in enumerate(ids):
                w.writerow([name, iid, "", fmt(getattr(m, name)[j])])
        for name in ("corr_rr", "corr_tt", "corr_rt"):
            mat = getattr(m, name)
            for j1, i1 in enumerate(ids):
                for j2, i2 in enumerate(ids):
                    w.writerow([name, i1, i2, fmt(mat[j1, j2])])


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lart", description="Joint accuracy / chain-of-thought length modelling.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a synthetic dataset")
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--j", type=int, default=50)
    s.add_argument("--rho", type=float, default=-0.8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--truth")
    s.add_argument("--round-lengths", action="store_true", help="round lengths to integers (floored at 1)")
    for name in ("a", "b", "omega", "phi", "lam"):
        s.add_argument(f"--law-{name}", type=_law, metavar="KIND:P1[,P2]")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit population parameters by SAEM")
    f.add_argument("--data", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--mode", choices=("lart", "irt"), default="lart")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--max-iters", type=int, default=500)
    f.add_argument("--tol", type=float, default=1e-4)
    f.add_argument("--samples", type=int, default=1, help="Monte Carlo draws per iteration")
    f.add_argument("--no-spectral-init", action="store_true",
                   help="start from random values with a burn-in step schedule")
    f.set_defaults(func=cmd_fit)

    sc = sub.add_parser("score", help="MAP traits with confidence intervals")
    sc.add_argument("--model", required=True)
    sc.add_argument("--data", required=True)
    sc.add_argument("--out", required=True)
    sc.add_argument("--ci", type=_unit_interval, default=0.95)
    sc.set_defaults(func=cmd_score)

    c = sub.add_parser("cat", help="simulate adaptive testing on a response pool")
    c.add_argument("--model", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--init-items", type=int, default=10)
    c.add_argument("--budget", type=int)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_cat)

    e = sub.add_parser("eval", help="evaluation experiments")
    e.add_argument("kind", choices=("predictive", "item-efficiency", "validity", "llm-efficiency", "init-compare"))
    e.add_argument("--data")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.add_argument("--max-iters", type=int, default=200)
    e.add_argument("--folds", type=int, default=5)
    e.add_argument("--init-items", type=int, default=10)
    e.add_argument("--sizes", type=int, nargs="+")
    e.add_argument("--n", type=int, default=500, help="subjects per replication (init-compare)")
    e.add_argument("--reps", type=int, default=20, help="replications (init-compare)")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("moments", help="closed-form marginal moments of a model")
    m.add_argument("--model", required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_moments)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (OSError, ValueError, ArithmeticError, RuntimeError, KeyError) as exc:
        print(f"lart {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
