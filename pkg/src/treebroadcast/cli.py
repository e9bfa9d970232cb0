"""Batch experiment driver.

Subcommands: magnetization, threshold, gq-mc, certify-g4, certify-table,
sbm-sample, sbm-detect, coupling-check, tree-dump, tree-replay, verify.
Every run is reproducible: identical config + seed + threads give
byte-identical primary outputs.  Pass --plot to also render a figure next to
the data file.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time

import numpy as np

from . import report
from .channel import ModelParams, ParameterError, channel_matrix, ks_lambda
from .certify import certified_g4_upper, check_row, QuadratureGrid, table_rows
from .gauss import gauss_limit, gq_deficit_mc, gq_mc, h_check, h_poly
from .gwtree import CustomPmf, Poisson, Regular, sample_tree, broadcast, canonical_code, \
    tree_from_json, tree_to_json
from .posterior import (
    brute_force_posterior,
    estimate_magnetization,
    magnetization_trajectory,
    posterior_root,
    star_exact,
)
from .recursions import PoleError, d_star, d_star_bisect, g4_cubic_coeff, \
    poisson_family, regular_family, threshold_report, y_moment_table
from .sbm import coupling_diagnostics, partition_map_success, read_edge_list, \
    sample_sbm, write_edge_list
from .seeding import DEFAULT_SEED, derive_rng

THREADS_ENV = "TREEBROADCAST_THREADS"


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(int(env), 1)
        except ValueError:
            raise CliError("bad-env", f"{THREADS_ENV} must be an integer, got {env!r}")
    return os.cpu_count() or 1


def _add_common(sub, model: bool = True, offspring: bool = False):
    sub.add_argument("--seed", type=int, default=DEFAULT_SEED,
                     help=f"master seed (default {DEFAULT_SEED:#x})")
    sub.add_argument("--threads", type=int, default=None,
                     help=f"worker count (default ${THREADS_ENV} or CPU count)")
    sub.add_argument("--output", "-o", default=None, help="output file (default stdout)")
    sub.add_argument("--format", choices=("json", "csv"), default="json")
    sub.add_argument("--plot", action="store_true",
                     help="also render a PNG figure next to the output file")
    if model:
        sub.add_argument("--q", type=int, default=None)
        sub.add_argument("--d", type=float, default=None)
        sub.add_argument("--lambda", dest="lam", type=float, default=None)
        sub.add_argument("--a", type=float, default=None)
        sub.add_argument("--b", type=float, default=None)
    if offspring:
        sub.add_argument("--offspring", choices=("poisson", "regular", "custom"),
                         default="poisson")
        sub.add_argument("--pmf", default=None,
                         help="comma-separated pmf over 0..K for --offspring custom")


def _params_from_args(args) -> ModelParams:
    if args.q is None:
        raise CliError("missing-q", "--q is required")
    have_dl = args.d is not None and args.lam is not None
    have_ab = args.a is not None and args.b is not None
    if have_dl == have_ab:
        raise CliError(
            "bad-parameterization",
            "supply exactly one of (--d, --lambda) or (--a, --b)",
        )
    try:
        if have_dl:
            return ModelParams.from_dlambda(args.q, args.d, args.lam)
        return ModelParams.from_ab(args.q, args.a, args.b)
    except ParameterError as exc:
        raise CliError("bad-params", str(exc))


def _offspring_from_args(args, d: float):
    if args.offspring == "poisson":
        return Poisson(d)
    if args.offspring == "regular":
        deg = int(round(d))
        if abs(deg - d) > 1e-9:
            raise CliError("bad-offspring", "regular offspring needs an integer degree")
        return Regular(deg)
    if not args.pmf:
        raise CliError("bad-offspring", "--offspring custom needs --pmf")
    try:
        probs = [float(t) for t in args.pmf.split(",")]
        return CustomPmf(probs)
    except (ValueError, ParameterError) as exc:
        raise CliError("bad-offspring", f"invalid pmf: {exc}")


def _emit(args, obj=None, csv_cols=None, csv_rows=None, figure=None, started=None):
    """Write the primary output (+ optional figure and metadata sidecar)."""
    threads = args.threads if args.threads is not None else _default_threads()
    if args.output:
        if args.format == "csv":
            if csv_cols is None:
                raise CliError("no-csv", "this subcommand has no CSV form")
            report.write_csv(args.output, csv_cols, csv_rows)
        else:
            report.write_json(args.output, obj)
        if started is not None:
            report.write_metadata(args.output, sys.argv[1:], threads, time.time() - started)
        if args.plot and figure is not None:
            figure(os.path.splitext(args.output)[0] + ".png")
    else:
        if args.format == "csv" and csv_cols is not None:
            sys.stdout.write(",".join(csv_cols) + "\n")
            for row in csv_rows:
                sys.stdout.write(",".join(report.fmt_float(v) for v in row) + "\n")
        else:
            sys.stdout.write(report.dump_json(obj) + "\n")
        if args.plot and figure is not None:
            figure("figure.png")


# ---------------------------------------------------------------------------
# subcommand bodies


def cmd_magnetization(args) -> int:
    started = time.time()
    params = _params_from_args(args)
    dist = _offspring_from_args(args, params.d)
    rng = derive_rng(args.seed, 1)
    stats = magnetization_trajectory(
        dist, params, args.depth, args.samples, rng,
        estimator_mode=args.mode, method=args.method,
    )
    cols = ["n", "x", "x_se", "z", "u", "v", "w", "samples"]
    rows = [[s.n, s.x, s.x_se, s.z, s.u, s.v, s.w, s.samples] for s in stats]
    obj = {
        "params": {"q": params.q, "lambda": params.lam, "d": params.d,
                   "a": params.a, "b": params.b},
        "mode": args.mode,
        "trajectory": [dict(zip(cols, row)) for row in rows],
    }
    label = f"q={params.q} d={params.d:g} lambda={params.lam:g} ({args.mode})"
    _emit(args, obj=obj, csv_cols=cols, csv_rows=rows, started=started,
          figure=lambda png: report.plot_magnetization(stats, label, png))
    return 0


def cmd_threshold(args) -> int:
    started = time.time()
    if args.offspring == "custom":
        raise CliError("bad-offspring",
                       "threshold formulas need a d-parameterized family (poisson/regular)")
    rep = threshold_report(args.offspring, args.d).to_dict()
    fam = poisson_family if args.offspring == "poisson" else regular_family
    rep["d_star_bisect"] = d_star_bisect(fam)

    def fig(png):
        lo = max(2.0, rep["d_star"] * 0.3)
        ds = [lo + k * (rep["d_star"] * 1.7 - lo) / 80 for k in range(81)]
        curve = [(d, g4_cubic_coeff(d, -1.0 / math.sqrt(d), args.offspring)) for d in ds]
        report.plot_threshold(rep, curve, png)

    _emit(args, obj=rep, started=started, figure=fig)
    return 0


def cmd_gq_mc(args) -> int:
    started = time.time()
    rows = []
    points = []
    for k, s in enumerate(args.s):
        est = gq_mc(args.q, s, args.samples, derive_rng(args.seed, 2, k))
        row = {"q": args.q, "s": s, "estimate": est.estimate, "se": est.se,
               "samples": est.samples}
        if args.deficit:
            defc = gq_deficit_mc(args.q, s, args.samples, derive_rng(args.seed, 3, k))
            row.update({
                "deficit": defc.deficit, "deficit_se": defc.deficit_se,
                "cubic_ratio": defc.cubic_ratio, "series_order": defc.order,
            })
        rows.append(row)
        points.append((s, est.estimate, est.se))
    obj = {"q": args.q, "samples": args.samples, "points": rows}
    cols = list(rows[0].keys())
    _emit(args, obj=obj, csv_cols=cols, csv_rows=[[r[c] for c in cols] for r in rows],
          started=started, figure=lambda png: report.plot_gq(points, png))
    return 0


def cmd_certify_g4(args) -> int:
    started = time.time()
    threads = args.threads if args.threads is not None else _default_threads()
    res = certified_g4_upper(args.s, args.n, tail_extent=args.tail,
                             threads=threads, checkpoint_path=args.checkpoint)
    margin = args.margin if args.margin is not None else 0.0
    obj = {
        "s": res.s, "n": res.n, "tail_extent": res.tail_extent,
        "upper_lo": res.upper_lo, "upper_hi": res.upper_hi,
        "margin": res.s - res.upper_hi,
        "pass": bool(res.upper_hi < res.s - margin),
        "required_margin": margin,
    }
    _emit(args, obj=obj, started=started)
    return 0 if obj["pass"] else 3


def cmd_certify_table(args) -> int:
    started = time.time()
    threads = args.threads if args.threads is not None else _default_threads()
    rows = []
    grids: dict = {}
    selected = list(table_rows(groups=args.groups, limit_per_group=args.limit))
    for group, s, n, margin, cap in selected:
        if n not in grids:
            grids[n] = QuadratureGrid.build(n)
        ck = None
        if args.checkpoint_dir:
            os.makedirs(args.checkpoint_dir, exist_ok=True)
            ck = os.path.join(args.checkpoint_dir, f"certify_{n}_{s:.6f}.json")
        res = certified_g4_upper(s, n, threads=threads, checkpoint_path=ck, grid=grids[n])
        rows.append({
            "group": group, "s": s, "n": n,
            "upper_lo": res.upper_lo, "upper_hi": res.upper_hi,
            "required_margin": margin, "cap": cap,
            "pass": check_row(res, margin, cap),
        })
    ok = all(r["pass"] for r in rows)
    if args.output:
        report.write_json_lines(args.output, rows)
        report.write_metadata(args.output, sys.argv[1:], threads, time.time() - started)
        if args.plot:
            report.plot_certify_table(rows, os.path.splitext(args.output)[0] + ".png")
    else:
        import json as _json

        for r in rows:
            sys.stdout.write(_json.dumps(r, sort_keys=True) + "\n")
    return 0 if ok else 3


def cmd_sbm_sample(args) -> int:
    started = time.time()
    params = _params_from_args(args)
    rng = derive_rng(args.seed, 4)
    graph = sample_sbm(args.n, params, rng, seed=args.seed)
    if not args.output:
        raise CliError("missing-output", "sbm-sample writes an edge list; pass --output")
    write_edge_list(graph, args.output)
    report.write_metadata(args.output, sys.argv[1:],
                          args.threads if args.threads is not None else _default_threads(),
                          time.time() - started)
    return 0


def cmd_sbm_detect(args) -> int:
    started = time.time()
    if args.graph:
        graph = read_edge_list(args.graph)
    else:
        params = _params_from_args(args)
        graph = sample_sbm(args.n, params, derive_rng(args.seed, 4), seed=args.seed)
    m = args.m if args.m is not None else max(int(math.ceil(graph.n ** 0.2)), 1)
    reports = []
    for ell in args.ell:
        rep = partition_map_success(graph, ell, m, derive_rng(args.seed, 5, ell),
                                    include_nontree=args.include_nontree)
        reports.append({
            "ell": ell, "m": rep.m, "success": rep.success,
            "success_classified": rep.success_classified,
            "classified": rep.classified,
            "nontree_fraction": rep.nontree_fraction,
            "n_classes": rep.n_classes,
            "include_nontree": rep.include_nontree,
        })
    obj = {"n": graph.n, "q": graph.params.q, "d": graph.params.d,
           "lambda": graph.params.lam, "m": m, "results": reports}
    cols = list(reports[0].keys())
    _emit(args, obj=obj, csv_cols=cols,
          csv_rows=[[r[c] for c in cols] for r in reports], started=started,
          figure=lambda png: report.plot_detect(reports, png))
    return 0


def cmd_coupling_check(args) -> int:
    started = time.time()
    params = _params_from_args(args)
    rep = coupling_diagnostics(args.n, params, args.ell, args.m,
                               derive_rng(args.seed, 6), degree_cap=args.degree_cap)
    obj = {
        "n": rep.n, "m": rep.m, "ell": rep.ell, "degree_cap": rep.degree_cap,
        "tv": rep.tv, "tv_center_spin": rep.tv_center_spin,
        "tv_root_degree": rep.tv_root_degree,
        "tv_boundary_spin": rep.tv_boundary_spin,
        "sbm_tree_fraction": rep.sbm_tree_fraction,
        "sbm_included": rep.sbm_included, "gw_included": rep.gw_included,
        "analytic_bound_aggregate": rep.analytic_bound_aggregate,
        "analytic_bound_within": rep.analytic_bound_within,
        "analytic_bound_between": rep.analytic_bound_between,
    }
    _emit(args, obj=obj, started=started)
    return 0


def cmd_tree_dump(args) -> int:
    started = time.time()
    params = _params_from_args(args)
    dist = _offspring_from_args(args, params.d)
    rng = derive_rng(args.seed, 7)
    tree = sample_tree(dist, args.depth, rng)
    spins = broadcast(tree, params, args.root_spin, rng)
    text = tree_to_json(tree, spins)
    if args.output:
        with open(args.output, "w", newline="\n") as fh:
            fh.write(text + "\n")
        report.write_metadata(args.output, sys.argv[1:],
                              args.threads if args.threads is not None else _default_threads(),
                              time.time() - started)
    else:
        sys.stdout.write(text + "\n")
    return 0


def cmd_tree_replay(args) -> int:
    started = time.time()
    params = _params_from_args(args)
    with open(args.input) as fh:
        tree, spins = tree_from_json(fh.read(), q=params.q)
    if spins is None:
        raise CliError("no-spins", "replay needs a dump with spins")
    boundary = spins.spins[tree.boundary]
    post = posterior_root(tree, params, boundary)
    obj = {
        "vertices": tree.n_vertices,
        "depth": int(tree.depth.max()),
        "root_degree": tree.root_degree,
        "root_spin": int(spins.spins[0]),
        "canonical_code": canonical_code(tree, boundary).decode(),
        "posterior_root": [float(p) for p in post],
    }
    _emit(args, obj=obj, started=started)
    return 0


def cmd_verify(args) -> int:
    """Condensed oracle-equivalence and identity suite with pass/fail lines."""
    started = time.time()
    checks = []

    def check(name, ok, detail=""):
        checks.append({"name": name, "pass": bool(ok), "detail": detail})

    # channel identities
    p = ModelParams.from_dlambda(4, 25.0, 0.2)
    mat = channel_matrix(p)
    check("channel-rows-sum-1", np.allclose(mat.sum(axis=1), 1.0, atol=1e-15))
    check("channel-ab-roundtrip",
          abs(p.a - 40.0) < 1e-12 and abs(p.b - 20.0) < 1e-12)
    check("ks-lambda", abs(25.0 * ks_lambda(25.0) ** 2 - 1.0) < 1e-12)
    p3 = ModelParams.from_dlambda(3, 2.0, 0.6)
    k_half = channel_matrix(ModelParams.from_dlambda(3, 2.0, 0.5))
    k_comp = channel_matrix(ModelParams.from_dlambda(3, 2.0, 0.3))
    check("channel-composition",
          np.allclose(k_half @ channel_matrix(p3), k_comp, atol=1e-15))

    # posterior oracle on small trees
    from .gwtree import RootedTree
    from .posterior import brute_force_posterior_all_boundaries, posterior_root_batch
    worst = 0.0
    for parent in ([-1, 0, 0, 1, 1], [-1, 0, 1, 2], [-1, 0, 0, 0, 2, 2]):
        tree = RootedTree.from_parents(np.asarray(parent))
        for q, lam in ((2, -0.3), (3, 0.6), (4, 0.5)):
            pp = ModelParams.from_dlambda(q, 2.0, lam)
            nb = tree.boundary.size
            grid = np.indices((q,) * nb).reshape(nb, -1).T + 1
            got = posterior_root_batch(tree, pp, grid)
            oracle = brute_force_posterior_all_boundaries(tree, pp)
            codes = ((grid - 1) * q ** np.arange(nb)).sum(axis=1)
            worst = max(worst, float(np.abs(got - oracle[codes]).max()))
    check("posterior-oracle-small-trees", worst < 1e-12, f"max dev {worst:.2e}")

    # basic identities on a star
    pp = ModelParams.from_dlambda(4, 3.0, 0.5)
    ex = star_exact(pp, 3)
    table = y_moment_table(ex.x, ex.u, ex.v, ex.w, pp.lam, pp.q)
    check("y-moment-symmetric-sum",
          abs(table.m1_main + (pp.q - 1) * table.m1_other) < 1e-15)

    # thresholds
    ds = d_star("poisson")
    check("d-star-poisson-closed-form",
          abs(ds - ((18 + math.sqrt(226)) / 7) ** 2) < 1e-12, f"d*={ds:.6f}")
    check("d-star-poisson-bisection",
          abs(ds - d_star_bisect(poisson_family)) < 1e-6)
    check("h-endpoint", h_poly(0.0612) < -0.02)
    check("h-check", h_check().passed)
    ok = all(c["pass"] for c in checks)
    for c in checks:
        sys.stdout.write(f"{'PASS' if c['pass'] else 'FAIL'} {c['name']}"
                         + (f" ({c['detail']})" if c["detail"] else "") + "\n")
    obj = {"checks": checks, "all_pass": ok}
    if args.output:
        report.write_json(args.output, obj)
        report.write_metadata(args.output, sys.argv[1:],
                              args.threads if args.threads is not None else _default_threads(),
                              time.time() - started)
    return 0 if ok else 3


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="treebroadcast",
        description="Broadcast-on-tree and sparse-SBM experiment driver",
    )
    sp = ap.add_subparsers(dest="command", required=True)

    s = sp.add_parser("magnetization", help="Monte-Carlo magnetization trajectory")
    _add_common(s, offspring=True)
    s.add_argument("--depth", type=int, required=True)
    s.add_argument("--samples", type=int, default=10_000)
    s.add_argument("--mode", choices=("quadratic", "linear"), default="quadratic")
    s.add_argument("--method", choices=("auto", "tree", "population"), default="auto")
    s.set_defaults(func=cmd_magnetization)

    s = sp.add_parser("threshold", help="critical degree and cubic-coefficient report")
    _add_common(s, model=False, offspring=True)
    s.add_argument("--d", type=float, default=None)
    s.set_defaults(func=cmd_threshold)

    s = sp.add_parser("gq-mc", help="Monte-Carlo estimate of the Gaussian-limit map")
    _add_common(s, model=False)
    s.add_argument("--q", type=int, required=True)
    s.add_argument("--s", type=float, nargs="+", required=True)
    s.add_argument("--samples", type=int, default=1_000_000)
    s.add_argument("--deficit", action="store_true",
                   help="also estimate s - g(s) by series-controlled differencing")
    s.set_defaults(func=cmd_gq_mc)

    s = sp.add_parser("certify-g4", help="certified upper bound on g_4(s)")
    _add_common(s, model=False)
    s.add_argument("--s", type=float, required=True)
    s.add_argument("--n", type=int, choices=(100, 200), required=True)
    s.add_argument("--tail", type=int, default=5)
    s.add_argument("--margin", type=float, default=None)
    s.add_argument("--checkpoint", default=None,
                   help="JSON file holding per-slab partial sums for resumption")
    s.set_defaults(func=cmd_certify_g4)

    s = sp.add_parser("certify-table", help="replay the certified target table")
    _add_common(s, model=False)
    s.add_argument("--groups", nargs="*", default=None,
                   help="subset of S1..S6 (default: all)")
    s.add_argument("--limit", type=int, default=None, help="points per group")
    s.add_argument("--checkpoint-dir", default=None)
    s.set_defaults(func=cmd_certify_table)

    s = sp.add_parser("sbm-sample", help="sample a sparse SBM to an edge-list file")
    _add_common(s)
    s.add_argument("--n", type=int, required=True)
    s.set_defaults(func=cmd_sbm_sample)

    s = sp.add_parser("sbm-detect", help="partition-class majority estimator success")
    _add_common(s)
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--graph", default=None, help="read an edge-list file instead of sampling")
    s.add_argument("--ell", type=int, nargs="+", default=[1])
    s.add_argument("--m", type=int, default=None,
                   help="centers to sample (default ceil(n^(1/5)))")
    s.add_argument("--include-nontree", action="store_true")
    s.set_defaults(func=cmd_sbm_detect)

    s = sp.add_parser("coupling-check", help="neighborhood vs GW-broadcast coupling TV")
    _add_common(s)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--ell", type=int, default=2)
    s.add_argument("--m", type=int, default=1000)
    s.add_argument("--degree-cap", type=int, default=None)
    s.set_defaults(func=cmd_coupling_check)

    s = sp.add_parser("tree-dump", help="sample a broadcast tree to JSON")
    _add_common(s, offspring=True)
    s.add_argument("--depth", type=int, required=True)
    s.add_argument("--root-spin", type=int, default=None)
    s.set_defaults(func=cmd_tree_dump)

    s = sp.add_parser("tree-replay", help="reload a dumped tree and recompute")
    _add_common(s)
    s.add_argument("--input", required=True)
    s.set_defaults(func=cmd_tree_replay)

    s = sp.add_parser("verify", help="oracle-equivalence and identity self-checks")
    _add_common(s, model=False)
    s.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        sys.stderr.write(f"error: {exc.code}: {exc}\n")
        return 2
    except (ParameterError, PoleError) as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
