"""Command-line entry point.

Subcommands group the checks: ``simulate`` (duality + martingale),
``gradient``, ``harnack``, ``kernel-bound``, ``logsob``, the full ``sweep``,
and ``report`` to summarize emitted JSON reports.  Exit code 0 when every
row HOLDS or HOLDS_WITHIN_ERROR, 2 on any VIOLATED, 1 on usage or config
errors.
"""
from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError
from . import verifier


SUBCOMMAND_CHECKS = {
    "simulate": ["duality", "martingale"],
    "gradient": ["gradient"],
    "harnack": ["harnack_i", "harnack_ii", "harnack_plain"],
    "kernel-bound": ["kernel_bound", "kernel_bound_cor1", "kernel_bound_cor2"],
    "logsob": ["logsob_semigroup", "logsob_measure", "supercontractivity"],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _add_common(sp):
    sp.add_argument("--config", help="experiment config JSON (defaults to the built-in config)")
    sp.add_argument("--seed", type=int, help="override estimator seed")
    sp.add_argument("--paths", type=int, help="override estimator n_paths")
    sp.add_argument("--dt", type=float, help="override estimator dt")
    sp.add_argument("--out", default="out", help="output directory")
    sp.add_argument("--format", choices=("csv", "json"), help="report format override")
    sp.add_argument("--mc-only", action="store_true", help="Monte Carlo left-hand sides only")
    sp.add_argument("--oracle-only", action="store_true", help="PDE-solver left-hand sides only")


def build_parser():
    ap = _Parser(prog="evoheat", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in (*SUBCOMMAND_CHECKS, "sweep"):
        sp = sub.add_parser(name)
        _add_common(sp)
    rp = sub.add_parser("report", help="summarize emitted JSON reports")
    rp.add_argument("paths", nargs="+", help="report.json files")
    return ap


def _resolve_config(args):
    cfg = verifier.load_config(args.config) if args.config else verifier.default_config()
    est = cfg.setdefault("estimator", {})
    if args.seed is not None:
        est["seed"] = args.seed
    if args.paths is not None:
        est["n_paths"] = args.paths
    if args.dt is not None:
        est["dt"] = args.dt
    if args.mc_only and args.oracle_only:
        raise ConfigError("--mc-only and --oracle-only are mutually exclusive")
    if args.mc_only:
        cfg["mode"] = "mc"
    if args.oracle_only:
        cfg["mode"] = "oracle"
    if args.format:
        cfg.setdefault("output", {})["format"] = args.format
    if args.out:
        cfg.setdefault("output", {})["dir"] = args.out
    return verifier.validate_config(cfg)


def _print_summary(reports):
    summary = verifier.summarize(reports)
    for check_id in sorted(summary):
        e = summary[check_id]
        print(f"{check_id:22s} n={e['n']:4d}  HOLDS={e['HOLDS']:4d}  "
              f"WITHIN_ERR={e['HOLDS_WITHIN_ERROR']:4d}  VIOLATED={e['VIOLATED']:4d}  "
              f"min_margin={e['min_margin']:.6g}")


def _run_checks(args, checks):
    cfg = _resolve_config(args)
    reports = verifier.sweep(cfg, checks=checks)
    out = cfg.get("output", {})
    fmt = out.get("format", "csv")
    meta = {"seed": cfg["estimator"].get("seed"), "config": cfg, "checks": checks}
    path = verifier.emit(reports, fmt=fmt, out_dir=out.get("dir", "out"),
                         name="report", meta=meta)
    _print_summary(reports)
    print(f"wrote {path}")
    return verifier.exit_code(reports)


def _report(args):
    reports = []
    for path in args.paths:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        for d in doc.get("reports", []):
            reports.append(verifier.CheckReport(
                check_id=d["check_id"], model=d["model"], f=d.get("f", ""),
                s=d.get("s"), t=d.get("t"), p=d.get("p"), q=d.get("q"), r=d.get("r"),
                x=tuple(d["x"]) if d.get("x") else None,
                y=tuple(d["y"]) if d.get("y") else None,
                lhs=d.get("lhs", float("nan")), rhs=d.get("rhs", float("nan")),
                margin=d.get("margin", float("nan")),
                error_budget=d.get("error_budget", 0.0),
                verdict=d.get("verdict", "HOLDS"), extra=d.get("extra", {})))
    _print_summary(reports)
    return verifier.exit_code(reports)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return _report(args)
        checks = SUBCOMMAND_CHECKS.get(args.command)  # None means full sweep
        return _run_checks(args, checks)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
