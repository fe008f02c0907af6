"""``genrestore`` command line.

Exit codes: 0 success, 2 configuration/input error, 3 numerical failure.
"""

import argparse
import logging
import sys

from . import harness
from .config import load_config
from .errors import (ConfigError, DimensionMismatch, GenRestoreError, MalformedFile,
                     VersionMismatch)

log = logging.getLogger("genrestore")

TASKS = {
    "restore": harness.run_restore,
    "separate": harness.run_separate,
    "mmse": harness.run_mmse,
    "benchmark": harness.run_benchmark,
}


def build_parser():
    p = argparse.ArgumentParser(prog="genrestore",
                                description="Restore / separate signals under a generative prior.")
    p.add_argument("task", choices=[*TASKS, "gradcheck"])
    p.add_argument("--config", required=True, help="experiment JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--iters", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--restarts", type=int)
    p.add_argument("--unknown-params", action="store_true", default=None)
    p.add_argument("--exponent-mode", choices=["n", "n+1"])
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    overrides = {"seed": args.seed, "out": args.out, "iters": args.iters, "lr": args.lr,
                 "momentum": args.momentum, "restarts": args.restarts,
                 "unknown_params": args.unknown_params, "exponent_mode": args.exponent_mode}
    try:
        cfg = load_config(args.config, overrides)
        if cfg["task"] != args.task:
            raise ConfigError(f"config declares task {cfg['task']!r}, CLI asked for {args.task!r}")
        if args.task == "gradcheck":
            return _gradcheck(cfg)
        report, _ = TASKS[args.task](cfg)
    except (ConfigError, DimensionMismatch, MalformedFile, VersionMismatch) as exc:
        print(f"genrestore: configuration error: {exc}", file=sys.stderr)
        return 2
    except (GenRestoreError, ArithmeticError) as exc:
        print(f"genrestore: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    sys.stdout.write(report.to_csv())
    return 0


def _gradcheck(cfg):
    results = harness.run_gradcheck(cfg)
    ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.objective}: max rel err {r.max_rel_error:.3e} "
              f"(tol {r.tolerance:g}, {r.instances} instances)")
        ok &= r.passed
    if not ok:
        print("genrestore: gradient check failed", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
