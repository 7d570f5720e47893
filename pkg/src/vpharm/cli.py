"""Command line entry point: ``vpharm {pmean,solve,amvp,converge}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import NotConverged, VPharmError
from .pmean import WeightedSample, as_exponent, compute_pmean

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        from .experiments import schema_help

        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}\n\n{schema_help()}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _numbers(text: str) -> np.ndarray:
    path = Path(text)
    if path.is_file():
        text = path.read_text()
    parts = [t for t in text.replace("\n", ",").split(",") if t.strip()]
    try:
        return np.array([float(t) for t in parts])
    except ValueError:
        raise VPharmError(f"not a list of numbers: {text!r}") from None


def _fmt(x: float) -> str:
    return format(float(x), ".15g")


def _cmd_pmean(args) -> int:
    vals = _numbers(args.values)
    w = _numbers(args.weights) if args.weights else None
    res = compute_pmean(WeightedSample(vals, w), as_exponent(args.p))
    print(_fmt(res.nu))
    print(f"residual {res.residual:.3e}")
    return EXIT_OK


def _cmd_solve(args) -> int:
    from .experiments import load_config, run_solve

    cfg = load_config(args.config)
    rep = run_solve(cfg)
    print(f"converged in {rep.iterations} iterations; wrote {cfg.out / 'solution.csv'} and {cfg.out / 'report.json'}")
    return EXIT_OK


def _cmd_amvp(args) -> int:
    from .experiments import load_config, nonincreasing, run_amvp_study

    cfg = load_config(args.config)
    res = run_amvp_study(cfg)
    for p in sorted({k[0] for k in res.max_error}):
        errs = res.errors_for(p)
        trend = "nonincreasing" if nonincreasing(errs) else "NOT nonincreasing"
        print(f"p={p}: max error by eps {[f'{e:.3e}' for e in errs]} ({trend})")
    print(f"wrote {res.path}")
    return EXIT_OK


def _cmd_converge(args) -> int:
    from .experiments import load_config, run_convergence_study

    cfg = load_config(args.config)

    def show(row):
        flag = "" if row.converged else "  [not converged]"
        print(f"p={row.p} eps={row.eps:g} h={row.h:g} sup_error={row.sup_error:.3e} "
              f"iters={row.iters} {row.seconds:.1f}s{flag}", flush=True)

    res = run_convergence_study(cfg, progress=show)
    for p, ok in res.decreasing.items():
        print(f"p={p}: sup_error {'strictly decreasing' if ok else 'NOT strictly decreasing'} in eps")
    print(f"wrote {res.path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="vpharm", description="p-means, ball averages and Perron iteration")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    pm = sub.add_parser("pmean", help="p-mean of a weighted sample")
    pm.add_argument("--p", required=True, help="exponent in [1, inf]")
    pm.add_argument("--values", required=True, help="comma separated values or a file")
    pm.add_argument("--weights", help="comma separated weights or a file")
    pm.set_defaults(func=_cmd_pmean)
    for name, func, what in (("solve", _cmd_solve, "solution.csv and report.json"),
                             ("amvp", _cmd_amvp, "amvp.csv"),
                             ("converge", _cmd_converge, "convergence.csv")):
        sp = sub.add_parser(name, help=f"write {what}")
        sp.add_argument("--config", required=True, help="JSON study config")
        sp.set_defaults(func=func)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NotConverged as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (VPharmError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
