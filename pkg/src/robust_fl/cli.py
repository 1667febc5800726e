"""
cli.py
Date: 12/10/2026
--------------------------------------------------------#
Description: CLI interface that connects the simulator pieces

Usage examples (run from repo root):

# Run one experiment and write data/runs/<name>.csv + .json
python -m robust_fl.cli run --config data/configs/large_outlier_iid_arkrum.toml

# Same, but write into another folder
python -m robust_fl.cli run --config my_experiment.toml --out results/

# Summarise several runs into one table (optionally against a clean baseline)
python -m robust_fl.cli compare data/runs/*.csv --baseline data/runs/clean_mean.csv --out table.csv

# Run one config under several aggregators (one CSV each)
python -m robust_fl.cli sweep --config data/configs/large_outlier_iid_arkrum.toml --aggregators mean krum rkrum arkrum

# Accuracy vs round for several runs in one figure
python -m robust_fl.cli plot data/runs/*.csv --out data/runs/accuracy.png

# Check the fast implementations against the brute-force references
python -m robust_fl.cli oracle
--------------------------------------------------------#
"""

from __future__ import annotations

import argparse
import importlib
import logging
from pathlib import Path

logger = logging.getLogger(__name__)


def _import_sibling_module(module_basename: str):
    """
    Import a sibling module lazily, so `robust-fl -h` does not pay for numpy/scipy.

    Tries the relative import first and falls back to the absolute
    'robust_fl.<module_basename>' name.
    """
    if __package__:
        return importlib.import_module(f".{module_basename}", package=__package__)
    return importlib.import_module(f"robust_fl.{module_basename}")


def cmd_run(args: argparse.Namespace) -> Path:
    """
    Run the experiment described by --config. Returns the metrics CSV path.
    """
    harness = _import_sibling_module("harness")
    cfg = harness.parse_config(args.config)
    logger.info("Loaded config %s", Path(args.config).resolve())
    record = harness.run_experiment(cfg, progress=not args.no_progress)
    out = harness.write_metrics(record, out_dir=args.out)
    summary = record.summary
    print(f"{cfg.output.name}: final mean accuracy {summary['final_mean_accuracy']:.4f} "
          f"(max {summary['max_accuracy']:.4f}) -> {out}")
    return out


def cmd_compare(args: argparse.Namespace):
    """
    Build the comparison table for one or more metrics CSVs and write it to --out.
    """
    harness = _import_sibling_module("harness")
    table = harness.compare_runs(args.csv, baseline=args.baseline)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(out, index=False, lineterminator="\n")
        logger.info("Comparison table written: %s", out)
    print(table.to_string(index=False))
    return table


def cmd_sweep(args: argparse.Namespace):
    """
    Run --config once per aggregator in --aggregators. Returns the CSV paths.
    """
    harness = _import_sibling_module("harness")
    cfg = harness.parse_config(args.config)
    paths = harness.sweep_aggregators(cfg, args.aggregators, out_dir=args.out, progress=not args.no_progress)
    print(harness.compare_runs(paths).to_string(index=False))
    return paths


def cmd_plot(args: argparse.Namespace) -> Path:
    """
    Plot test accuracy against round for the given metrics CSVs.
    """
    plotting = _import_sibling_module("plotting")
    out = plotting.plot_accuracy(args.csv, args.out, title=args.title)
    print(f"Figure written: {out}")
    return out


def cmd_oracle(args: argparse.Namespace) -> bool:
    """
    Run the brute-force verification suites. Returns True when all pass.
    """
    oracle = _import_sibling_module("oracle")
    results = oracle.run_oracle_suites(seed=args.seed)
    for r in results:
        status = "ok" if r.passed else "MISMATCH"
        print(f"{r.name:<10} {r.instances:>5} instances  {r.mismatches:>3} mismatches  {r.seconds:6.2f}s  {status}")
    return all(r.passed for r in results)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robust-fl", description="Byzantine-robust federated learning simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log per-round details")
    sub = parser.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="Run one experiment from a TOML config")
    r.add_argument("--config", required=True, help="Path to the experiment TOML file")
    r.add_argument("--out", default=None, help="Output folder (default: output.dir from the config, data/runs)")
    r.add_argument("--no-progress", dest="no_progress", action="store_true", help="Hide the round progress bar")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="Summarise metrics CSVs into one table")
    c.add_argument("csv", nargs="+", help="Metrics CSV files written by `run`")
    c.add_argument("--baseline", default=None, help="Metrics CSV of a clean run; adds a `degraded` column")
    c.add_argument("--out", default=None, help="Where to write the table as CSV (optional)")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("sweep", help="Run one config under several aggregators")
    s.add_argument("--config", required=True, help="Path to the experiment TOML file")
    s.add_argument("--aggregators", nargs="+", default=["mean", "krum", "mkrum", "rkrum", "arkrum"],
                   help="Aggregators to run (default: all five)")
    s.add_argument("--out", default=None, help="Output folder (default: output.dir from the config, data/runs)")
    s.add_argument("--no-progress", dest="no_progress", action="store_true", help="Hide the round progress bar")
    s.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="Plot test accuracy against round for metrics CSVs")
    p.add_argument("csv", nargs="+", help="Metrics CSV files written by `run` or `sweep`")
    p.add_argument("--out", required=True, help="Image file to write (.png, .pdf or .svg)")
    p.add_argument("--title", default=None, help="Figure title (optional)")
    p.set_defaults(func=cmd_plot)

    o = sub.add_parser("oracle", help="Check Krum, the median filter and the SSE split against brute force")
    o.add_argument("--seed", type=int, default=0, help="Seed for the random instances (default: 0)")
    o.set_defaults(func=cmd_oracle)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s: %(message)s")
    try:
        result = args.func(args)
    except Exception as e:
        logger.error("Error: %s", e)
        return 2
    if args.cmd == "oracle" and not result:
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
