"""Command-line entry point: ``framp-sim --config run.cfg [overrides]``.

Exit codes: 0 success, 1 runtime failure, 2 malformed config or arguments.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import METHODS, ConfigError, load_config
from .experiment import run_experiment


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="framp-sim", description=__doc__.splitlines()[0])
    p.add_argument("--config", required=True, help="key = value config file")
    p.add_argument("--method", choices=METHODS, help="override the config's method")
    p.add_argument("--seed", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(
            args.config, method=args.method, seed=args.seed, rounds=args.rounds, eval_every=args.eval_every
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        res = run_experiment(cfg, args.out)
    except Exception as exc:  # noqa: BLE001
        logging.getLogger(__name__).debug("run failed", exc_info=True)
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    line = "  ".join(f"{k}={v:.4f}" for k, v in [("Local", res.local), ("Union", res.union)])
    print(f"{cfg.method} seed={cfg.seed} rounds={cfg.rounds}  {line}  -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
