"""Command-line entry point: ``ldpofl {factorize,calibrate,simulate,compare}``.

Exit codes: 0 success, 2 configuration or argument error, 3 numerical
failure, 4 diagnostics violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import mf_mechanism as mfm
from .experiment import ConfigError, compare, experiment_config, read_json, sim_config, simulate
from .federation import DiagnosticsError, NumericalError
from .privacy import calibrate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_DIAGNOSTICS = 4


class UsageError(Exception):
    pass


def _positive_steps(args) -> int:
    if args.steps is None or args.steps < 1:
        raise UsageError(f"--steps must be a positive integer, got {args.steps}")
    return args.steps


def _factorization(args) -> mfm.Factorization:
    if getattr(args, "factorization", None):
        return mfm.load_factorization(args.factorization)
    steps = _positive_steps(args)
    try:
        kind = mfm.Kind.parse(args.mechanism)
    except ValueError as exc:
        raise UsageError(f"--mechanism: {exc}") from None
    if kind is mfm.Kind.EXTERNAL:
        raise UsageError("--mechanism external needs --factorization FILE")
    return mfm.build(kind, steps)


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_factorize(args) -> int:
    f = _factorization(args)
    out = Path(args.out or f"factorization_{f.kind.value}_{f.steps}.csv")
    mfm.save_factorization(f, out)
    stats = mfm.factorization_stats(f, args.tau)
    stats["path"] = str(out)
    _print_json(stats)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    f = _factorization(args)
    try:
        pb = calibrate(args.epsilon, args.delta, args.clip, f)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _print_json(pb.to_json())
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = sim_config(read_json(args.config))
    out = args.out or Path(args.config).with_suffix("").name + "_run"
    summary = simulate(cfg, out, timing=args.timing, with_static=args.static)
    _print_json(summary)
    return EXIT_OK


def cmd_compare(args) -> int:
    exp = experiment_config(read_json(args.config))
    rows = compare(exp, args.out, workers=args.workers, timing=args.timing)
    _print_json(rows)
    return EXIT_OK


def cmd_toeplitz_report(args) -> int:
    _print_json(mfm.toeplitz_norm_report(args.sizes))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ldpofl",
        description="Locally private online federated learning with correlated noise.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def mech_args(sp):
        sp.add_argument("--mechanism", default="toeplitz",
                        help="binary-tree, toeplitz or identity")
        sp.add_argument("--steps", type=int, help="total local steps R*tau")
        sp.add_argument("--factorization", help="load factors from a CSV file instead")

    f = sub.add_parser("factorize", help="write a factorization file and print its norms")
    mech_args(f)
    f.add_argument("--tau", type=int, default=None, help="report per-round row norms")
    f.add_argument("--out", help="output CSV path")
    f.set_defaults(func=cmd_factorize)

    c = sub.add_parser("calibrate", help="noise variance for an (epsilon, delta) budget")
    mech_args(c)
    c.add_argument("--epsilon", type=float, required=True)
    c.add_argument("--delta", type=float, required=True)
    c.add_argument("--clip", type=float, default=1.0, help="gradient norm bound")
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("simulate", help="run one configuration")
    s.add_argument("config", help="SimConfig JSON file")
    s.add_argument("--out", help="output directory")
    s.add_argument("--timing", action="store_true", help="record wall time in summary.json")
    s.add_argument("--static", action="store_true", help="also compute static regret")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("compare", help="run several mechanisms over several seeds")
    m.add_argument("config", help="ExperimentConfig JSON file")
    m.add_argument("--out", help="output directory (default: output_dir from config)")
    m.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    m.add_argument("--timing", action="store_true", help="record runtimes in the summary")
    m.set_defaults(func=cmd_compare)

    t = sub.add_parser("toeplitz-report", help="exact Toeplitz norms against closed-form bounds")
    t.add_argument("--sizes", type=int, nargs="+", default=[2, 4, 8, 16, 64, 256, 1024, 4000])
    t.set_defaults(func=cmd_toeplitz_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, mfm.FactorizationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DiagnosticsError as exc:
        print(f"diagnostics violation (round {exc.round_index}): {exc}", file=sys.stderr)
        return EXIT_DIAGNOSTICS
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
