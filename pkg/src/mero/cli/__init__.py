"""``mero`` command line: run experiments, estimate minimal risks, report."""

import argparse
import logging
import sys

from .. import __version__
from ..errors import BudgetExhausted, ConfigError, SchemaError
from .config import RunConfig, load_config
from .report import cmd_report
from .runner import cmd_estimate_rstar, cmd_run

EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_IO = 4

__all__ = ["RunConfig", "cmd_estimate_rstar", "cmd_report", "cmd_run", "load_config", "main"]


def _parser():
    ap = argparse.ArgumentParser(prog="mero", description=__doc__)
    ap.add_argument("--version", action="version", version=f"mero {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    run = sub.add_parser("run", help="run every configured algorithm and seed")
    run.add_argument("config")
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--out", default=None)
    run.add_argument("--no-timing", action="store_true", help="write zeros for wall-clock fields")
    rep = sub.add_parser("report", help="aggregate traces into CSV and SVG")
    rep.add_argument("dir")
    est = sub.add_parser("estimate-rstar", help="write rstar.csv for a config")
    est.add_argument("config")
    est.add_argument("--out", default=None)
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "run":
            if args.jobs < 1:
                raise ConfigError("must be >= 1", "--jobs")
            cfg = load_config(args.config)
            manifest = cmd_run(cfg, args.out, args.jobs, timing=not args.no_timing)
            for r in manifest["runs"]:
                print(f"{r['algorithm']:<16} seed {r['seed']:<4} MER {r['final_mer']:.4f} "
                      f"MWER {r['final_mwer']:.4f}  -> {r['trace']}")
        elif args.cmd == "report":
            _, slopes, charts = cmd_report(args.dir)
            print(f"{'algo':<16} {'metric':<6} slope")
            for algo, metric, s in slopes:
                print(f"{algo:<16} {metric:<6} {s:.3f}")
            print("charts:", ", ".join(charts))
        else:
            cfg = load_config(args.config)
            path, est = cmd_estimate_rstar(cfg, args.out)
            print(f"wrote {path} ({est.method})")
    except (ConfigError, SchemaError) as exc:
        print(f"mero: configuration error: {exc}", file=sys.stderr)
        if getattr(exc, "diff", None):
            print(exc.diff, file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExhausted as exc:
        print(f"mero: budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except OSError as exc:
        print(f"mero: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
