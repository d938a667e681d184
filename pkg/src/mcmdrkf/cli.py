"""Command-line front end.

Subcommands: static-demo, simulate, compare, tune-gamma. Exit codes: 0 on
success, 1 on usage/config errors, 2 on numerical failures (solver or
projection breakdown, failed demo checks).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import EstimationError, InvalidInput
from .experiment import run_comparison, static_demo, tune_gamma
from .simulate import ExperimentConfig, _shaping, load_config, simulate_truth, with_overrides


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; we reserve 2 for
    numerical failures, so usage problems exit with 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON experiment config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", metavar="DIR", help="override the output directory")
    common.add_argument(
        "--threads", type=int, default=1, help="worker threads for Monte-Carlo runs"
    )
    common.add_argument(
        "--json", action="store_true", help="print a machine-readable summary"
    )

    parser = _Parser(prog="mcmdrkf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    demo = sub.add_parser(
        "static-demo", parents=[common], help="run the worked static instance"
    )
    demo.add_argument("--sensors", type=int, default=2, help="number of sensors (1-3)")
    demo.add_argument("--gamma1", type=float, default=1.0)
    demo.add_argument("--gamma2", type=float, default=1.0)

    sub.add_parser(
        "simulate", parents=[common], help="write true trajectories and measurements"
    )
    sub.add_parser("compare", parents=[common], help="Monte-Carlo method comparison")
    sub.add_parser(
        "tune-gamma", parents=[common], help="grid-search the robust filter's band"
    )
    return parser


def _load_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return with_overrides(cfg, seed=args.seed, out_dir=args.out)


def _print_averages(table, stream=sys.stdout) -> None:
    avgs = table.averages()
    stream.write(f"{'method':<10}{'component':<12}{'avg_mse'}\n")
    for method in table.methods:
        for comp, v in enumerate(avgs[method]):
            stream.write(f"{method:<10}{comp:<12}{float(v):.6g}\n")


def _cmd_static_demo(args) -> int:
    report, ok = static_demo(
        sensors=args.sensors, gamma1=args.gamma1, gamma2=args.gamma2
    )
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        print(f"nominal MSE:      {report['nominal_mse']:.9f}")
        print(f"worst-case MSE:   {report['worst_case_mse']:.9f}")
        if report["oracle_mse"] is not None:
            print(f"grid-oracle MSE:  {report['oracle_mse']:.9f}")
        print(f"gain A:           {report['A']}")
        print(f"intercept b:      {report['b']}")
        for name, passed in report["checks"].items():
            print(f"check {name}: {'pass' if passed else 'FAIL'}")
    return 0 if ok else 2


def _cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n, m = cfg.model.n, sum(cfg.model.m)
    header = (
        ["t", "run"]
        + [f"x{i}" for i in range(n)]
        + [f"y{i}" for i in range(m)]
    )
    lines = [",".join(header)]
    shape = _shaping(cfg.model)
    for run in range(cfg.runs):
        states, meas = simulate_truth(cfg, run, _shape=shape)
        for t in range(cfg.steps):
            vals = [str(t + 1), str(run)]
            vals += [repr(float(v)) for v in states[t]]
            vals += [repr(float(v)) for v in meas[t]]
            lines.append(",".join(vals))
    (out / "truth.csv").write_text("\n".join(lines) + "\n")
    if args.json:
        print(json.dumps({"runs": cfg.runs, "steps": cfg.steps, "file": str(out / "truth.csv")}))
    else:
        print(f"wrote {cfg.runs} runs x {cfg.steps} steps to {out / 'truth.csv'}")
    return 0


def _cmd_compare(args) -> int:
    cfg = _load_config(args)
    table = run_comparison(cfg, threads=args.threads)
    if args.json:
        avgs = {m: [float(v) for v in vals] for m, vals in table.averages().items()}
        print(json.dumps({"avg_mse": avgs, "out_dir": cfg.out_dir}))
    else:
        _print_averages(table)
        print(f"results written to {cfg.out_dir}/")
    return 0


def _cmd_tune_gamma(args) -> int:
    cfg = _load_config(args)
    best, table = tune_gamma(cfg, threads=args.threads)
    if args.json:
        avgs = {m: [float(v) for v in vals] for m, vals in table.averages().items()}
        print(json.dumps({"gamma1": best[0], "gamma2": best[1], "avg_mse": avgs}))
    else:
        print(f"best band: gamma1={best[0]} gamma2={best[1]}")
        _print_averages(table)
    return 0


_COMMANDS = {
    "static-demo": _cmd_static_demo,
    "simulate": _cmd_simulate,
    "compare": _cmd_compare,
    "tune-gamma": _cmd_tune_gamma,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except InvalidInput as err:
        sys.stderr.write(f"config error: {err}\n")
        return 1
    except OSError as err:
        sys.stderr.write(f"io error: {err}\n")
        return 1
    except EstimationError as err:
        sys.stderr.write(f"numerical failure: {err}\n")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
