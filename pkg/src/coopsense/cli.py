"""``run-sweep`` command line entry point."""

import argparse
import logging
import sys
from typing import List, Optional

from .experiment import ConfigError, load_config, make_config, run_sweep, write_csv

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _floats(text: str):
    return tuple(float(t) for t in text.split(",") if t.strip())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="run-sweep", description="Monte-Carlo localization sweep to CSV.")
    p.add_argument("--config", help="flat key=value file with ExperimentConfig fields")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--topology", choices=["circular", "linear"])
    p.add_argument("--receivers", type=int, dest="n_receivers")
    p.add_argument("--rsnr", type=_floats, help="comma-separated dB values")
    p.add_argument("--capacity", type=_floats, help="comma-separated bits per receiver, 'inf' allowed")
    p.add_argument("--quantizer", choices=["klt", "uniform"])
    p.add_argument("--design", choices=["advanced", "baseline", "both"])
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, dest="master_seed")
    p.add_argument("--workers", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("config", "out", "verbose") and v is not None}
    if "quantizer" in overrides:
        overrides["quantizer"] = (overrides["quantizer"],)
    try:
        config = load_config(args.config, **overrides) if args.config else make_config(**overrides)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rows = run_sweep(config)
        write_csv(rows, args.out)
    except Exception as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
