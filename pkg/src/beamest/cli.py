"""Command-line entry point: ``beamest sweep | channel | leakage``."""

import argparse
import logging
import sys

from .errors import BeamEstError, ConfigError
from . import harness

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _cmd_sweep(args):
    cfg = harness.parse_config(args.config)
    if args.workers is not None:
        cfg = cfg.replace(workers=args.workers)

    def progress(done, total):
        if done == total or done % max(1, total // 20) == 0:
            logging.getLogger("beamest").info("trial %d/%d", done, total)

    result = harness.run_sweep(cfg, progress=progress)
    harness.emit_csv(result, args.out)


def _cmd_channel(args):
    cfg = harness.parse_config(args.config)
    if args.seed < 0:
        raise ConfigError("seed", "must be >= 0")
    drop = harness.channel_drop(cfg, args.seed)
    harness.write_channel_dump(args.out, drop.H_B, cfg.rho, args.seed)


def _cmd_leakage(args):
    if args.grid < 1:
        raise ConfigError("grid", "must be >= 1")
    if not 1 <= args.i_s <= args.i_e:
        raise ConfigError("is", "need 1 <= is <= ie")
    pairs = harness.run_leakage(args.i_s, args.i_e, args.theta0, args.grid)
    harness.write_leakage_csv(pairs, args.out)


def build_parser():
    p = argparse.ArgumentParser(prog="beamest", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    sw = sub.add_parser("sweep", help="Monte-Carlo NMSE versus SNR, written as CSV")
    sw.add_argument("--config", required=True)
    sw.add_argument("--out", required=True)
    sw.add_argument("--workers", type=int, default=None, help="override the config's worker count")
    sw.set_defaults(func=_cmd_sweep)

    ch = sub.add_parser("channel", help="dump one beam-domain channel drop")
    ch.add_argument("--config", required=True)
    ch.add_argument("--seed", type=int, required=True)
    ch.add_argument("--out", required=True)
    ch.set_defaults(func=_cmd_channel)

    lk = sub.add_parser("leakage", help="normalised leakage envelope over a beam grid")
    lk.add_argument("--is", dest="i_s", type=int, required=True, help="first visible element (1-based)")
    lk.add_argument("--ie", dest="i_e", type=int, required=True, help="last visible element (1-based)")
    lk.add_argument("--theta0", type=float, required=True)
    lk.add_argument("--grid", type=int, required=True)
    lk.add_argument("--out", required=True)
    lk.set_defaults(func=_cmd_leakage)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse usage errors are configuration errors
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BeamEstError, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
