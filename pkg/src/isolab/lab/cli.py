"""``isolab run | report | suite``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import ConfigError
from .config import load_config
from .report import report
from .runner import EXIT_CONFIG, EXIT_OK, run

log = logging.getLogger("isolab")


def _run_one(path, out, seed, workers) -> int:
    try:
        cfg = load_config(path, seed)
        if workers is not None:
            cfg = cfg.model_copy(update={"workers": workers})
        rec = run(cfg, out)
    except ConfigError as err:
        print(f"{path}: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    status = "ok" if rec.error is None else f"failed ({rec.error['type']}: {rec.error['message']})"
    print(f"{rec.path}  {status}  summary {rec.summary_hash[:16]}")
    return rec.exit_code


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="isolab", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config")
    r.add_argument("--out", default=None)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--workers", type=int, default=None)
    p = sub.add_parser("report", help="render SVGs and a summary for a finished run")
    p.add_argument("run_dir")
    s = sub.add_parser("suite", help="run every *.toml in a directory")
    s.add_argument("dir")
    s.add_argument("--out", default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--workers", type=int, default=None)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    if args.cmd == "run":
        return _run_one(args.config, args.out, args.seed, args.workers)
    if args.cmd == "report":
        if not (Path(args.run_dir) / "record.json").exists():
            print(f"{args.run_dir}: no run record", file=sys.stderr)
            return EXIT_CONFIG
        print(report(args.run_dir))
        return EXIT_OK
    configs = sorted(Path(args.dir).glob("*.toml"))
    if not configs:
        print(f"{args.dir}: no configs", file=sys.stderr)
        return EXIT_CONFIG
    codes = [_run_one(c, args.out, args.seed, args.workers) for c in configs]
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
