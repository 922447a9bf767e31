"""Command-line entry point: ``gammarank <subcommand> ...``.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 config error.
"""

from __future__ import annotations

import argparse
import functools
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from .cluster import UNASSIGNED, adjusted_rand_index, assign_bayes, assign_threshold, cluster_summary
from .em import DEFAULT_ITERS, DEFAULT_TOL, EstimationConfig, em_fit, estimate_shared_params, refit_shared_params
from .errors import ConfigError, GammaRankError, InputError
from .io import (
    DataMatrix,
    align_layout,
    fmt,
    read_assignments,
    read_layout,
    read_matrix,
    read_posterior,
    versions,
    write_assignments,
    write_layout,
    write_matrix,
    write_outputs,
)
from .model import SharedParams, log_density_counts, log_density_gamma, log_density_matrix, resolve_threads
from .rankprob import GammaRankProblem, gamma_rank_prob, gamma_rank_prob_mc, log_gamma_rank_prob
from .simulator import SimulationConfig, simulate
from .structures import (
    MAX_CATALOG_P,
    ExperimentLayout,
    enumerate_ordered_structures,
    enumerate_partitions,
    expand_orderings,
    filter_catalog,
    parse_structure,
    structure_p,
)

logger = logging.getLogger("gammarank")


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise InputError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _grid(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(t) for t in text.split(",")]


def _add_data_args(p: argparse.ArgumentParser):
    p.add_argument("--matrix", required=True, help="expression matrix (TSV; CSV by extension or --sep)")
    p.add_argument("--layout", required=True, help="layout file: sample id, group, optional library size")
    p.add_argument("--mode", choices=("gamma", "counts"), default="gamma")
    p.add_argument("--sep", choices=("tsv", "csv"), default=None)
    p.add_argument("--floor", type=float, default=None, metavar="EPS", help="raise gamma-mode values below EPS to EPS")


def _add_param_args(p: argparse.ArgumentParser):
    p.add_argument("--alpha", type=int)
    p.add_argument("--alpha0", type=int)
    p.add_argument("--nu0", type=float)


def _load(args) -> tuple[DataMatrix, ExperimentLayout]:
    matrix = read_matrix(args.matrix, args.mode, args.floor, args.sep)
    layout = align_layout(read_layout(args.layout), matrix.sample_ids)
    if args.mode == "counts" and layout.library_sizes is None:
        raise ConfigError("counts mode needs a library-size column in the layout file")
    return matrix, layout


def _explicit_params(args) -> SharedParams | None:
    given = [args.alpha, args.alpha0, args.nu0]
    if args.mode == "counts" and args.alpha0 is not None and args.nu0 is not None:
        return SharedParams(args.alpha or 1, args.alpha0, args.nu0)
    if all(v is not None for v in given):
        return SharedParams(*given)
    return None


def cmd_catalog(args):
    for i, eta in enumerate(enumerate_ordered_structures(args.p, include_null=not args.no_null)):
        print(f"{i}\t{eta.K}\t{eta}\t{eta.parent()}")


def cmd_rankprob(args):
    problem = GammaRankProblem(tuple(_shape_list(args.shapes)), tuple(_floats(args.rates)))
    if args.mc:
        est, se = gamma_rank_prob_mc(problem, args.mc, args.seed)
        print(f"{fmt(est)}\t{fmt(se)}")
    elif args.log:
        print(fmt(log_gamma_rank_prob(problem)))
    else:
        print(fmt(gamma_rank_prob(problem)))


def _shape_list(text):
    vals = _floats(text)
    if any(not v.is_integer() for v in vals):
        raise InputError(f"shapes must be integers, got {text!r}")
    return [int(v) for v in vals]


def cmd_density(args):
    matrix, layout = _load(args)
    params = _explicit_params(args)
    if params is None:
        raise ConfigError("density needs --alpha, --alpha0 and --nu0 (counts mode: --alpha0 and --nu0)")
    if args.row in matrix.row_ids:
        g = matrix.row_ids.index(args.row)
    elif args.row.isdigit() and int(args.row) < len(matrix.row_ids):
        g = int(args.row)
    else:
        raise InputError(f"unknown row {args.row!r}")
    eta = parse_structure(args.structure, layout.p)
    f = log_density_gamma if args.mode == "gamma" else log_density_counts
    print(fmt(f(matrix.values[g], eta, layout, params)))


def cmd_estimate(args):
    if args.mode != "gamma":
        raise ConfigError("parameter estimation is only available for the gamma model")
    matrix, layout = _load(args)
    est = estimate_shared_params(
        matrix.values, layout, EstimationConfig(_grid(args.grid), args.em_iters, not args.no_null, args.threads)
    )
    json.dump(_estimate_json(est), sys.stdout, indent=2)
    print()


def _estimate_json(est):
    return {
        "alpha": est.params.alpha,
        "alpha0": est.params.alpha0,
        "nu0": est.params.nu0,
        "alpha_raw": est.alpha_raw,
        "mean_cv2": est.mean_cv2,
        "alpha0_profile": {str(k): v for k, v in est.profile.items()},
    }


def cmd_simulate(args):
    if args.p > MAX_CATALOG_P:
        raise ConfigError(f"simulation catalog supports p <= {MAX_CATALOG_P}")
    sizes = None
    if args.mode == "counts":
        if not args.library_sizes:
            raise ConfigError("counts mode needs --library-sizes")
        sizes = _floats(args.library_sizes)
        if len(sizes) == 1:
            sizes = sizes * (args.p * args.replicates)
    layout = ExperimentLayout.balanced(args.p, args.replicates, sizes)
    layout = ExperimentLayout(
        layout.group_of,
        layout.library_sizes,
        tuple(f"s{i + 1}" for i in range(layout.n_samples)),
        tuple(f"g{j}" for j in range(1, args.p + 1)),
    )
    catalog = enumerate_ordered_structures(args.p, include_null=not args.no_null)
    if args.weights == "uniform":
        weights = np.full(len(catalog), 1.0 / len(catalog))
    else:
        weights = np.asarray(_floats(args.weights))
        if weights.size != len(catalog):
            raise ConfigError(f"--weights needs {len(catalog)} values (catalog order, see `catalog`)")
    params = SharedParams(args.alpha, args.alpha0, args.nu0)
    config = SimulationConfig(layout, params, catalog, weights, args.rows, args.seed, args.mode)
    result = simulate(config, return_means=args.means)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    ids = [f"row{g + 1}" for g in range(args.rows)]
    write_matrix(out / "data.tsv", DataMatrix(ids, list(layout.sample_ids), result.data))
    write_layout(out / "layout.tsv", layout)
    with open(out / "truth.tsv", "w") as fh:
        header = ["id", "index", "structure"] + ([f"mean_{s}" for s in layout.sample_ids] if args.means else [])
        fh.write("\t".join(header) + "\n")
        for g, c in enumerate(result.labels):
            row = [ids[g], str(c), str(catalog[c])]
            if args.means:
                row += [fmt(v) for v in result.means[g]]
            fh.write("\t".join(row) + "\n")


def cmd_fit(args):
    t0 = time.perf_counter()
    matrix, layout = _load(args)
    threads = resolve_threads(args.threads)
    params = _explicit_params(args)
    estimate = None
    if params is None:
        if not args.estimate_params:
            raise ConfigError("give --alpha, --alpha0 and --nu0, or --estimate-params")
        if args.mode != "gamma":
            raise ConfigError("--estimate-params is only available for the gamma model")
        estimate = estimate_shared_params(matrix.values, layout, EstimationConfig(include_null=not args.no_null, threads=threads))
        p = estimate.params
        params = SharedParams(args.alpha or p.alpha, args.alpha0 or p.alpha0, args.nu0 or p.nu0)

    include_null = not args.no_null
    if args.filter_threshold is not None:
        if args.mode != "gamma":
            raise ConfigError("--filter-threshold needs the gamma model (unordered pre-fit)")
        partitions = [u for u in enumerate_partitions(layout.p) if include_null or u.K > 1]
        Lu = log_density_matrix(matrix.values, partitions, layout, params, ordered=False, threads=threads)
        pre = em_fit(Lu, max_iters=args.iters, rel_tol=args.tol)
        full = expand_orderings(partitions, include_null)
        catalog = filter_catalog(full, partitions, pre.posterior, args.filter_threshold)
        if not catalog:
            raise ConfigError("filtering removed every structure; lower --filter-threshold")
    else:
        if layout.p > MAX_CATALOG_P:
            raise ConfigError(f"p={layout.p} exceeds {MAX_CATALOG_P}; use --filter-threshold")
        catalog = enumerate_ordered_structures(layout.p, include_null)
    logger.info("catalog has %d structures", len(catalog))

    if args.refit:
        params, fit = refit_shared_params(matrix.values, layout, catalog, params, args.refit, args.iters, threads)
    else:
        L = log_density_matrix(matrix.values, catalog, layout, params, mode=args.mode, threads=threads)
        fit = em_fit(L, max_iters=args.iters, rel_tol=args.tol)
    if args.assign_mode == "threshold":
        assignment = assign_threshold(fit.posterior, args.c, matrix.row_ids)
    else:
        assignment = assign_bayes(fit.posterior, matrix.row_ids)
    summary = cluster_summary(assignment, catalog)

    manifest = {
        "config": {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose")},
        "params": {"alpha": params.alpha, "alpha0": params.alpha0, "nu0": params.nu0},
        "estimate": _estimate_json(estimate) if estimate else None,
        "groups": {str(j + 1): name for j, name in enumerate(layout.group_names or [])},
        "catalog_size": len(catalog),
        "n_rows": len(matrix.row_ids),
        "em": {"iterations": fit.iterations, "converged": fit.converged, "loglik": fit.loglik},
        "clusters": {"nonempty": len(summary), "unassigned": summary.n_unassigned},
        "versions": versions(),
    }
    write_outputs(args.outdir, matrix, layout, catalog, fit, assignment, manifest, posterior=args.posterior)
    logger.info("fit finished in %.2f s", time.perf_counter() - t0)
    print(f"{len(summary)} clusters, {summary.n_unassigned} unassigned, loglik {fit.loglik:.6f}")


def cmd_assign(args):
    ids, texts, post = read_posterior(args.posterior)
    if not texts:
        raise InputError("posterior file has no structure columns")
    p = structure_p(texts[0])
    catalog = [parse_structure(t, p) for t in texts]
    if args.mode == "threshold":
        assignment = assign_threshold(post, args.c, ids)
    else:
        assignment = assign_bayes(post, ids)
    write_assignments(args.out, ids, catalog, assignment)
    print(f"{int(assignment.assigned.sum())} assigned, {assignment.n_unassigned} unassigned")


def cmd_compare(args):
    ids_a, lab_a = read_assignments(args.a)
    ids_b, lab_b = read_assignments(args.b)
    if set(ids_a) != set(ids_b):
        raise InputError("assignment files cover different row sets")
    if UNASSIGNED in lab_a or UNASSIGNED in lab_b:
        raise InputError("adjusted Rand index needs fully assigned partitions")
    lookup = dict(zip(ids_b, lab_b))
    print(fmt(adjusted_rand_index(np.array(lab_a), np.array([lookup[i] for i in ids_a]))))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser = argparse.ArgumentParser(prog="gammarank", description="Gamma-based clustering via ordered means.")
    sub = parser.add_subparsers(dest="command", required=True)
    add = functools.partial(sub.add_parser, parents=[common])

    p = add("catalog", help="list the ordered structures for p groups")
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--no-null", action="store_true")
    p.set_defaults(func=cmd_catalog)

    p = add("rankprob", help="P(Z_1 > ... > Z_K) for independent gammas")
    p.add_argument("--shapes", required=True, help="comma-separated integer shapes")
    p.add_argument("--rates", required=True, help="comma-separated rates")
    p.add_argument("--log", action="store_true", help="print the natural log")
    p.add_argument("--mc", type=int, default=0, metavar="N", help="Monte Carlo with N draws instead")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_rankprob)

    p = add("density", help="log component density of one row")
    _add_data_args(p)
    _add_param_args(p)
    p.add_argument("--row", required=True, help="row id or 0-based index")
    p.add_argument("--structure", required=True, help='structure text, e.g. "(13)(2)"')
    p.set_defaults(func=cmd_density)

    p = add("estimate-params", help="estimate alpha, alpha0, nu0")
    _add_data_args(p)
    p.add_argument("--grid", default="1..20", help="alpha0 grid, 'lo..hi' or comma list")
    p.add_argument("--em-iters", type=int, default=30)
    p.add_argument("--no-null", action="store_true")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_estimate)

    p = add("simulate", help="simulate a data set from the mixture")
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--replicates", type=int, default=3)
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--alpha", type=int, default=10)
    p.add_argument("--alpha0", type=int, default=3)
    p.add_argument("--nu0", type=float, default=32.0)
    p.add_argument("--weights", default="uniform", help="'uniform' or comma list in catalog order")
    p.add_argument("--no-null", action="store_true")
    p.add_argument("--mode", choices=("gamma", "counts"), default="gamma")
    p.add_argument("--library-sizes", help="comma list, or one value for all samples")
    p.add_argument("--means", action="store_true", help="also write latent means to truth.tsv")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = add("fit", help="fit mixing weights by EM and assign rows")
    _add_data_args(p)
    _add_param_args(p)
    p.add_argument("--estimate-params", action="store_true")
    p.add_argument("--iters", type=int, default=DEFAULT_ITERS)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--filter-threshold", type=float, nargs="?", const=0.5, default=None)
    p.add_argument("--no-null", action="store_true")
    p.add_argument("--refit", type=int, default=0, metavar="CYCLES", help="alternate EM with a shape grid update")
    p.add_argument("--posterior", action="store_true", help="write posterior.tsv")
    p.add_argument("--assign-mode", choices=("bayes", "threshold"), default="bayes")
    p.add_argument("--c", type=float, default=0.5)
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_fit)

    p = add("assign", help="assign rows from a posterior file")
    p.add_argument("--posterior", required=True)
    p.add_argument("--mode", choices=("bayes", "threshold"), default="bayes")
    p.add_argument("--c", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_assign)

    p = add("compare", help="adjusted Rand index of two assignment files")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        args.func(args)
    except GammaRankError as exc:
        print(f"gammarank: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FloatingPointError, OverflowError) as exc:
        print(f"gammarank: numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
