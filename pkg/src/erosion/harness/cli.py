"""Command line: list, describe, run, report.  Exit status 0 iff all checks pass."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiments import REGISTRY
from .runner import DEFAULT_SEED, ExperimentConfig, get_experiment, load_run, run_experiment


def _parse_param(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _cmd_list(args) -> int:
    for name, exp in sorted(REGISTRY.items(), key=lambda kv: kv[1].criterion):
        print(f"{exp.criterion:>2}  {name:<28} {exp.summary}")
    return 0


def _cmd_describe(args) -> int:
    exp = get_experiment(args.name)
    print(f"{exp.name} (criterion {exp.criterion}): {exp.summary}")
    print("parameters:")
    for k, v in exp.schema.items():
        print(f"  {k} = {json.dumps(v)}")
    print("checks:")
    for c in exp.check_names():
        print(f"  {c}")
    return 0


def _cmd_run(args) -> int:
    params = dict(args.param or [])
    out = args.out if args.out is not None else f"runs/{args.name}"
    cfg = ExperimentConfig(args.name, params, args.seed, out, args.workers)
    rec = run_experiment(cfg)
    for line in rec.summary_lines():
        print(line)
    if not args.no_plots:
        from .plots import emit_plots

        for p in emit_plots(rec, out):
            print(f"wrote {p}")
    print(f"{'PASS' if rec.passed else 'FAIL'} {args.name} ({rec.wall_time:.1f} s) -> {Path(out) / 'results.json'}")
    return 0 if rec.passed else 1


def _cmd_report(args) -> int:
    rec = load_run(args.run_dir)
    for line in rec.summary_lines():
        print(line)
    return 0 if rec.passed else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="erosion", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="list registered experiments").set_defaults(func=_cmd_list)
    d = sub.add_parser("describe", help="show an experiment's parameters and checks")
    d.add_argument("name")
    d.set_defaults(func=_cmd_describe)
    r = sub.add_parser("run", help="run an experiment")
    r.add_argument("name")
    r.add_argument("--param", action="append", type=_parse_param, metavar="KEY=VALUE",
                   help="override a parameter (value parsed as JSON when possible)")
    r.add_argument("--seed", type=int, default=DEFAULT_SEED)
    r.add_argument("--out", default=None, help="run directory (default runs/<name>)")
    r.add_argument("--workers", type=int, default=1, help="worker processes; results do not depend on it")
    r.add_argument("--no-plots", action="store_true")
    r.set_defaults(func=_cmd_run)
    rep = sub.add_parser("report", help="print the checks stored in a run directory")
    rep.add_argument("run_dir")
    rep.set_defaults(func=_cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
