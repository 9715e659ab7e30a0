"""Command line: ``wioc {simulate,fit,eval,report,compare}``.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..errors import ConfigError, InvalidInputError, NumericError
from .config import ExperimentConfig, load_config
from .runner import compare_methods, load_report, read_csv, run_experiment, run_fits, simulate, write_tidy
from .schemas import validate

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
log = logging.getLogger("wioc")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wioc", description="Inverse optimal control experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("simulate", "write baseline and demonstration data"),
                        ("fit", "fit the method and write checkpoints and logs"),
                        ("eval", "fit and evaluate; writes report.json"),
                        ("report", "turn report.json into tidy metrics.csv"),
                        ("compare", "run several methods and write comparison.csv")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", action="append", metavar="PATH",
                       help="INI config (compare accepts several)")
        p.add_argument("--seed", type=int, help="run this single seed")
        p.add_argument("--method", help="method name (compare: comma-separated list)")
        p.add_argument("--out", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def _configs(args) -> list:
    paths = args.config or []
    if not paths:
        raise ConfigError("--config is required")
    if args.command != "compare" and len(paths) > 1:
        raise ConfigError(f"{args.command} takes one --config")
    cfgs = [load_config(p) for p in paths]
    out = []
    for cfg in cfgs:
        if args.seed is not None:
            cfg = replace(cfg, seeds=(args.seed,))
        if args.out:
            cfg = replace(cfg, out=args.out)
        methods = args.method.split(",") if args.method else [cfg.method]
        if args.command != "compare" and len(methods) > 1:
            raise ConfigError(f"{args.command} takes one --method")
        for m in methods:
            out.append(cfg.with_method(m.strip()))
    return out


def _run(args) -> int:
    if args.command == "report":
        if args.config:
            out = Path(args.out or _configs(args)[0].out)
        elif args.out:
            out = Path(args.out)
        else:
            raise ConfigError("report needs --out or --config")
        report = load_report(out / "report.json")
        path = write_tidy(report, out / "metrics.csv")
        validate(read_csv(path), "metrics")
        print(path)
        return EXIT_OK
    cfgs = _configs(args)
    if args.command == "compare":
        out = Path(args.out or cfgs[0].out)
        rows = compare_methods(cfgs, out)
        for r in rows:
            print(",".join("" if r[k] is None else str(r[k]) for k in ("method", "p", "top1", "top5", "w1")))
        return EXIT_OK
    cfg: ExperimentConfig = cfgs[0]
    if args.command == "simulate":
        for p in simulate(cfg):
            print(p)
        return EXIT_OK
    if args.command == "fit":
        for p in run_fits(cfg):
            print(p)
        return EXIT_OK
    report = run_experiment(cfg)
    print(Path(cfg.out) / "report.json")
    if report["failures"]:
        kinds = {f["kind"] for f in report["failures"]}
        for f in report["failures"]:
            log.error("seed %s p %s: %s", f["seed"], f["p"], f["error"])
        return EXIT_NUMERIC if "numeric" in kinds else EXIT_CONFIG
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except (ConfigError, InvalidInputError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
