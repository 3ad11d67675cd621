"""Command-line interface.

Exit status: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import bootstrap as boot
from .estimate import DomainError, FitConfig, FitDivergence, InsufficientData, fit
from .evalkit import kde_fit, l2_distance, pit_ks
from .experiments import TABLES, desk_budget, run_table
from .io import (DataError, atomic_write_text, load_model, parse_points, save_model,
                 write_points, write_surface)
from .pattern import DomainBounds, GridSurface
from .simulate import (BUILTINS, InversionError, get_intensity, sample_fixed,
                       sample_pattern, thinning_generate)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _names(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _domain(values):
    if values is None:
        return None
    if len(values) % 2:
        raise DataError("--domain needs lo,hi pairs")
    return DomainBounds(tuple(values[0::2]), tuple(values[1::2]))


def _read_input(args):
    return parse_points(args.input, columns=args.columns, bounds=_domain(args.domain))


def _add_input(p):
    p.add_argument("--input", required=True, help="headered CSV of events")
    p.add_argument("--columns", type=_names, default=None,
                   help="comma-separated coordinate columns (default: all)")
    p.add_argument("--domain", type=_floats, default=None,
                   help="lo1,hi1[,lo2,hi2] observation window (default: data range)")


def _add_fit_options(p, iters=5000, lr=1e-4):
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--M", type=int, default=64)
    p.add_argument("--cond-width", type=int, default=64)
    p.add_argument("--iters", type=int, default=iters)
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--padding", type=float, default=0.01)
    p.add_argument("--batch", type=int, default=None, help="minibatch size (default: full batch)")


def _fit_config(args, seed):
    return FitConfig(n_layers=args.layers, M=args.M, hidden=args.cond_width,
                     learning_rate=args.lr, iterations=args.iters, batch_size=args.batch,
                     seed=seed, padding=args.padding)


def cmd_fit(args):
    pattern = _read_input(args)
    model = fit(pattern, _fit_config(args, args.seed))
    save_model(args.out, model)
    print(f"fitted n={pattern.n} d={pattern.dim}; objective "
          f"{model.fit_trace[0]:.6g} -> {model.fit_trace[-1]:.6g}")


def cmd_simulate(args):
    model = load_model(args.model)
    if args.poisson:
        pattern = sample_pattern(model, args.seed)
    else:
        pattern = sample_fixed(model, args.n, args.seed)
    write_points(args.out, pattern)
    print(f"simulated {pattern.n} events")


def cmd_generate(args):
    pattern = thinning_generate(args.intensity, seed=args.seed)
    write_points(args.out, pattern)
    print(f"generated {pattern.n} events from {args.intensity}")


def cmd_density(args):
    model = load_model(args.model)
    surface = GridSurface.evaluate(model, DomainBounds(model.bounds.lo, model.bounds.hi), args.grid)
    write_surface(args.out, surface)


def _exceed_path(template, threshold, many):
    if "{t}" in template:
        return template.replace("{t}", f"{threshold:g}")
    if not many:
        return template
    root, ext = os.path.splitext(template)
    return f"{root}_gt{threshold:g}{ext}"


def cmd_bootstrap(args):
    pattern = _read_input(args)
    ensemble = boot.bootstrap_fit(pattern, args.B, _fit_config(args, args.seed), args.seed,
                                  workers=args.workers)
    if ensemble.failures:
        print(f"{len(ensemble.failures)} replicate(s) failed", file=sys.stderr)
    template, values = boot.replicate_grid(ensemble, args.grid)
    se = GridSurface(template.bounds, template.resolution, np.std(values, axis=0, ddof=1))
    write_surface(args.out_se, se, "se")
    thresholds = args.thresholds or []
    for t in thresholds:
        if t < 0:
            raise DataError("thresholds must be non-negative")
        prob = GridSurface(template.bounds, template.resolution, np.mean(values > t, axis=0))
        write_surface(_exceed_path(args.out_exceed, t, len(thresholds) > 1), prob, "prob")
    print(f"bootstrap: {len(ensemble.replicates)} of {ensemble.B} replicates fitted")


def cmd_kde(args):
    pattern = _read_input(args)
    surface = GridSurface.evaluate(kde_fit(pattern), pattern.bounds, args.grid)
    write_surface(args.out, surface)


def cmd_evaluate(args):
    model = load_model(args.model)
    truth = get_intensity(args.truth)
    if model.dim != truth.dim:
        raise DataError(f"model is {model.dim}-d but {args.truth} is {truth.dim}-d")
    print(f"L2 distance: {l2_distance(model, truth, truth.bounds, args.grid):.6f}")


def cmd_qq(args):
    model = load_model(args.model)
    pattern = _read_input(args)
    ks, qq = pit_ks(model, pattern)
    text = "fitted_quantile,empirical_quantile\n" + "".join(
        f"{a!r},{b!r}\n" for a, b in qq.tolist())
    atomic_write_text(args.out, text)
    print(f"KS statistic: {ks:.6f}")


def cmd_experiment(args):
    budget = desk_budget(get_intensity(TABLES[args.name]).dim, args.iters, args.lr, args.batch)
    result = run_table(args.name, reps=args.reps, seed=args.seed, layers=args.layers,
                       budget=budget, workers=args.workers)
    print(result.format())
    if args.out:
        cols, means, sds = result.summary()
        text = "statistic," + ",".join(cols) + "\n"
        text += "mean," + ",".join(repr(m) for m in means) + "\n"
        text += "sd," + ",".join(repr(s) for s in sds) + "\n"
        atomic_write_text(args.out, text)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="flowintensity",
        description="Poisson-process intensity estimation with triangular transport maps.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit an intensity to a point pattern")
    _add_input(p)
    _add_fit_options(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="simulate events from a fitted model")
    p.add_argument("--model", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--n", type=int, help="exact number of events")
    g.add_argument("--poisson", action="store_true", help="draw the count from Poisson(mu_hat)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("generate", help="simulate a benchmark intensity by thinning")
    p.add_argument("--intensity", required=True, choices=sorted(BUILTINS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("density", help="fitted intensity on a regular grid")
    p.add_argument("--model", required=True)
    p.add_argument("--grid", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("bootstrap", help="bootstrap standard-error and exceedance surfaces")
    _add_input(p)
    _add_fit_options(p)
    p.add_argument("--B", type=int, default=100)
    p.add_argument("--grid", type=int, default=100)
    p.add_argument("--thresholds", type=_floats, default=[])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out-se", required=True)
    p.add_argument("--out-exceed", default="exceed.csv",
                   help="exceedance CSV; '{t}' is replaced by the threshold")
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("kde", help="Silverman-bandwidth Gaussian KDE intensity on a grid")
    _add_input(p)
    p.add_argument("--grid", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_kde)

    p = sub.add_parser("evaluate", help="L2 distance between a model and a benchmark intensity")
    p.add_argument("--model", required=True)
    p.add_argument("--truth", required=True, choices=sorted(BUILTINS))
    p.add_argument("--grid", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("qq", help="PIT QQ pairs and KS statistic")
    p.add_argument("--model", required=True)
    _add_input(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_qq)

    p = sub.add_parser("experiment", help="simulation study: flow vs KDE L2 distances")
    p.add_argument("--name", required=True, choices=sorted(TABLES))
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", type=_ints, default=[1, 2, 3, 4, 5])
    p.add_argument("--iters", type=int, default=None, help="default: desk budget for the dimension")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None, help="minibatch size; 0 forces full batch")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None, help="optional CSV of means and standard deviations")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (DataError, InsufficientData, DomainError, KeyError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (FitDivergence, InversionError, FloatingPointError, RuntimeError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
