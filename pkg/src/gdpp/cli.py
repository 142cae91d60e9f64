"""Command line entry point.

    gdpp solve|validate|dpp-check|compare|sweep --config PATH [--deterministic] [--out DIR]

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ProblemConfig, load_config
from .control import ValueSurface, solve_value
from .errors import ConfigurationError, GdppError
from .hjb import hjb_solve
from .validation import _clean, run_compare, run_dpp, run_sweep, run_validate

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
REPORT_SCHEMA = 1

log = logging.getLogger("gdpp")


def _timestamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_surface_csv(path: Path, V: ValueSurface, deterministic: bool) -> None:
    """Rows ``t, x1..xn, value, argmin_u`` with shortest round-trip floats."""
    n = V.sgrid.ndim
    X = V.sgrid.coords
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if not deterministic:
            fh.write(f"# generated {_timestamp()}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *[f"x{k + 1}" for k in range(n)], "value", "argmin_u"])
        for level, t in enumerate(V.times):
            t_txt = repr(float(t))
            vals = V.values[level]
            arg = V.argmin_controls[level]
            for p in range(V.sgrid.size):
                w.writerow([t_txt, *[repr(float(c)) for c in X[p]], repr(float(vals[p])), int(arg[p])])


def read_surface_csv(path) -> dict:
    """Parse a surface CSV back into arrays (comment lines skipped)."""
    with open(path, encoding="utf-8") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r[:-1]] for r in body])
    return {"header": header, "t": data[:, 0], "x": data[:, 1:-1], "value": data[:, -1],
            "argmin_u": np.array([int(r[-1]) for r in body])}


def write_report(path: Path, command: str, cfg: ProblemConfig, checks, deterministic: bool,
                 extra: dict | None = None) -> None:
    report = {"schema": REPORT_SCHEMA}
    if not deterministic:
        report["generated"] = _timestamp()
    report.update({
        "command": command,
        "config": cfg.name,
        "passed": all(c.passed for c in checks),
        "checks": [c.as_dict() for c in checks],
    })
    if extra:
        report.update(_clean(extra))
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, allow_nan=False)
        fh.write("\n")


def _solve(cfg: ProblemConfig, solver: str) -> ValueSurface:
    if solver == "hjb":
        return hjb_solve(cfg.context, cfg.tgrid, cfg.sgrid, cfg.hjb_substeps).restrict(cfg.tgrid)
    return solve_value(cfg.prob, cfg.gen, cfg.quad, cfg.tgrid, cfg.sgrid, cfg.picard_iters)


def _run(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out if args.out is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.command == "solve":
        V = _solve(cfg, args.solver)
        path = out / f"{cfg.name}_{args.solver}.csv"
        write_surface_csv(path, V, args.deterministic)
        origin = V.value(0, np.zeros(cfg.prob.n))
        print(f"{cfg.name}: V(t0, 0) = {origin!r} ({args.solver}, "
              f"{V.tgrid.steps} steps, {cfg.sgrid.size} points) -> {path}")
        return EXIT_OK
    extra = None
    if args.command == "validate":
        checks = run_validate(cfg)
    elif args.command == "dpp-check":
        checks = run_dpp(cfg)
    elif args.command == "compare":
        checks = run_compare(cfg)
    else:
        checks, rows = run_sweep(cfg)
        extra = {"ladder": rows}
    path = out / f"{cfg.name}_{args.command.replace('-', '_')}.json"
    write_report(path, args.command, cfg, checks, args.deterministic, extra)
    for c in checks:
        print(c.line())
    ok = all(c.passed for c in checks)
    print(f"{cfg.name}: {args.command} {'passed' if ok else 'FAILED'} -> {path}")
    return EXIT_OK if ok else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gdpp",
        description="Recursive optimal control under dominated nonlinear expectation: "
                    "value iteration, monotone HJB solver and structural checks.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "solve": "solve and write the value surface as CSV",
        "validate": "run the full property suite",
        "dpp-check": "multi-window dynamic programming residuals",
        "compare": "run both solvers and report the interior sup-norm gap",
        "sweep": "repeat the comparison over a refinement ladder",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="JSON problem config")
        p.add_argument("--deterministic", action="store_true",
                       help="omit timestamps so repeated runs are byte-identical")
        p.add_argument("--out", default=None, help="output directory (default: config output.dir)")
        if name == "solve":
            p.add_argument("--solver", choices=("semigroup", "hjb"), default="semigroup")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigurationError as exc:
        print(f"configuration error {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except GdppError as exc:
        print(f"configuration error [CFG000] {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
