"""Command-line driver.

    fisherhmc run CONFIG.json [--jobs N] [--output DIR] [--seed S]
    fisherhmc report SUMMARY... --reference KIND [--output DIR]
    fisherhmc kappa-sim --recipes N --dims D [--windows 10 20 50] [--output FILE]

``run`` exits 0 when every run converged (no post-warmup divergences and
minimum ESS above 200), 1 if any run failed or did not converge, and 2 on a
configuration error. The output directory defaults to ``$FISHERHMC_OUTPUT``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .experiment import (
    ConfigError,
    compare_report,
    kappa_sim,
    load_config,
    load_summaries,
    run_experiment,
)

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _write_csv(path_or_stream, rows, columns):
    own = isinstance(path_or_stream, (str, Path))
    fh = open(path_or_stream, "w", newline="") if own else path_or_stream
    try:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in columns})
    finally:
        if own:
            fh.close()


def cmd_run(args) -> int:
    try:
        config = load_config(args.config)
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    outcome = run_experiment(config, output_dir=args.output, jobs=args.jobs)
    for row in outcome.rows:
        status = "error" if row.get("error") else ("ok" if row["converged"] else "not converged")
        min_ess = row.get("min_ess")
        ess_txt = f"{min_ess:.0f}" if isinstance(min_ess, float) else "-"
        print(f"{row['target']:>20} {row['sampler']:>18} rep={row['replication']} "
              f"n_grad={row.get('n_grad')} min_ess={ess_txt} div={row.get('n_divergent')} {status}")
    print(f"wrote {outcome.output_dir}")
    return outcome.exit_code


def cmd_report(args) -> int:
    rows = load_summaries(args.summaries)
    try:
        rep = compare_report(rows, args.reference)
    except ValueError as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "ratios.csv", rep["ratios"], ["target", "sampler", "reference", "diagnostic", "ratio"])
        _write_csv(out / "ecdf.csv", rep["ecdf"], ["sampler", "diagnostic", "value", "cumulative"])
    else:
        _write_csv(sys.stdout, rep["ratios"], ["target", "sampler", "reference", "diagnostic", "ratio"])
    for (sampler, diag), med in sorted(rep["medians"].items()):
        print(f"median {diag} ratio {sampler}/{args.reference}: {med:.3f}")
    return EXIT_OK


def cmd_kappa_sim(args) -> int:
    rows = kappa_sim(args.recipes, args.dims, tuple(args.windows), seed=args.seed, eigval_param=args.eigval_sd)
    columns = ["recipe", "window", "kappa_identity", "kappa_fisher", "kappa_variance", "kappa_score"]
    if args.output:
        _write_csv(args.output, rows, columns)
    else:
        _write_csv(sys.stdout, rows, columns)
    for k in args.windows:
        sel = [r for r in rows if r["window"] == k]
        med = {c: float(np.median([r[c] for r in sel])) for c in columns[2:]}
        print(f"window {k}: median kappa' fisher={med['kappa_fisher']:.2f} "
              f"variance={med['kappa_variance']:.2f} score={med['kappa_score']:.2f}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fisherhmc", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config", help="path to the JSON config")
    run.add_argument("--jobs", type=int, default=None, help="worker processes (default: CPU count)")
    run.add_argument("--output", default=None,
                     help="output directory (default: config output_dir, then $FISHERHMC_OUTPUT)")
    run.add_argument("--seed", type=int, default=None, help="override the master seed")
    run.set_defaults(func=cmd_run)

    report = sub.add_parser("report", help="compare summaries against a reference sampler")
    report.add_argument("summaries", nargs="+", help="summary.jsonl or summary.csv files")
    report.add_argument("--reference", required=True, help="sampler name to divide by")
    report.add_argument("--output", default=None, help="directory for ratios.csv and ecdf.csv")
    report.set_defaults(func=cmd_report)

    ks = sub.add_parser("kappa-sim", help="kappa' of diagonal estimators on random spectra")
    ks.add_argument("--recipes", type=int, default=1000)
    ks.add_argument("--dims", type=int, default=50)
    ks.add_argument("--windows", type=int, nargs="+", default=[10, 20, 50])
    ks.add_argument("--seed", type=int, default=0)
    ks.add_argument("--eigval-sd", type=float, default=1.0, help="sd of log eigenvalues")
    ks.add_argument("--output", default=None, help="CSV path (default: stdout)")
    ks.set_defaults(func=cmd_kappa_sim)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
