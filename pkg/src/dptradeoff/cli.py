"""Command line entry point: gen-data, sweep, analyze, recommend."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import analysis, harness
from .data import write_dataset_csv


def _config(args) -> harness.ExperimentConfig:
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.config:
        return harness.load_config(args.config, profile=args.profile, **overrides)
    return harness.config_from_dict(overrides, profile=args.profile)


def _results_path(args) -> Path:
    return Path(args.results) if args.results else Path(args.out) / "results.csv"


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    for name, ds in harness.prepare_datasets(cfg).items():
        path = write_dataset_csv(ds, Path(args.out) / f"{name}.csv")
        print(f"wrote {path} ({ds.n} rows, {ds.p} features, {ds.n_classes} classes)")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    sink = Path(args.out) / "results.csv"
    records = harness.run_sweep(cfg, jobs=args.jobs, sink=sink)
    print(f"wrote {len(records)} records to {sink}")
    return 0


def _fmt_eps(e) -> str:
    return "none" if e is None else f"{e:.4g}"


def cmd_analyze(args) -> int:
    records = harness.read_results(_results_path(args))
    curves = analysis.aggregate(records)
    shown = analysis.select(curves, dataset=args.dataset, method=args.method, metric=args.metric)
    if not shown:
        print("no matching curves", file=sys.stderr)
        return 1
    for c in shown:
        print(f"{c.dataset} {c.method} ({c.stage}) {c.metric}")
        print(f"  {'epsilon':>10} {'mean':>10} {'std':>10} {'n':>4}")
        for eps, mean, std, n in c.points:
            print(f"  {eps:>10.4g} {mean:>10.4f} {std:>10.4f} {n:>4d}")
        inflection = analysis.find_inflection(c) if len(c.points) >= 3 else None
        print(f"  inflection epsilon*: {_fmt_eps(inflection)}")
    if args.plots:
        paths = analysis.emit_plot_data(curves, args.plots)
        print(f"wrote {len(paths)} plot files to {args.plots}")
    return 0


def cmd_recommend(args) -> int:
    records = harness.read_results(_results_path(args))
    curves = analysis.select(analysis.aggregate(records, metrics=("ACL",)), metric="ACL")
    for dataset in sorted({c.dataset for c in curves}):
        mine = analysis.select(curves, dataset=dataset)
        print(f"{dataset}: ACL-bounded")
        for bound in args.acl_bounds:
            r = analysis.recommend_for_acl(mine, bound)
            best = f"{r.method} at epsilon={r.achieved:.4g}" if r.feasible else "infeasible"
            print(f"  ACL <= {bound:g}: {best}")
        print(f"{dataset}: epsilon-bounded")
        for bound in args.eps_bounds:
            r = analysis.recommend_for_eps(mine, bound)
            print(f"  epsilon = {bound:g}: {r.method} with ACL={r.achieved:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML experiment config")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--profile", choices=sorted(harness.PROFILES), default="desk")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dptradeoff", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="write the synthetic dataset family").set_defaults(
        func=cmd_gen_data)
    sub.add_parser("sweep", parents=[common], help="run the configured sweep").set_defaults(
        func=cmd_sweep)

    a = sub.add_parser("analyze", parents=[common], help="print curves and inflection points")
    a.add_argument("--results", help="results CSV (default: OUT/results.csv)")
    a.add_argument("--metric", help="ACL, SalemMI, YeomMI, YeomAI or SalemAI")
    a.add_argument("--method", choices=sorted(harness.METHODS))
    a.add_argument("--dataset")
    a.add_argument("--plots", help="also write plot-data CSVs to this directory")
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("recommend", parents=[common], help="ACL- and epsilon-constrained tables")
    r.add_argument("--results", help="results CSV (default: OUT/results.csv)")
    r.add_argument("--acl-bounds", type=float, nargs="+", default=[0.01, 0.05, 0.1, 0.2])
    r.add_argument("--eps-bounds", type=float, nargs="+", default=[0.1, 1.0, 10.0, 100.0])
    r.set_defaults(func=cmd_recommend)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("--seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    if args.jobs < 1:
        print("--jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (harness.ConfigError, harness.ResultsSchemaError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
