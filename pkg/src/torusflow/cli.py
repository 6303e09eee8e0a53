"""Command-line driver.

Subcommands: simulate, ensemble, sweep, weak-strong, selftest.
Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 guard/floor trip that invalidates the scenario (weak-strong comparisons).
"""

from __future__ import annotations

import argparse
import json
import sys

from . import experiments
from .config import ENSEMBLE, SCHEME_COMPARE, SINGLE, SWEEP, WEAK_STRONG, ConfigError, load_config
from .stepping import NumericalError

_COMMAND_SCENARIO = {
    "simulate": SINGLE,
    "ensemble": ENSEMBLE,
    "sweep": SWEEP,
    "weak-strong": WEAK_STRONG,
    "compare": SCHEME_COMPARE,
}


def _add_run_arguments(sub):
    sub.add_argument("--config", required=True, help="path to the TOML scenario file")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--seed", type=int, default=None, help="override the master seed")
    sub.add_argument("--stride", type=int, default=None, help="override the state stride")
    sub.add_argument("--workers", type=int, default=None, help="override the worker count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="torusflow",
        description="Compressible flow on the torus with solenoidal transport noise")
    subs = parser.add_subparsers(dest="command", required=True)
    for name in _COMMAND_SCENARIO:
        _add_run_arguments(subs.add_parser(name, help=f"run a {name} scenario"))
    st = subs.add_parser("selftest", help="run the invariant suite")
    st.add_argument("--inject-fault", default=None, choices=["nonsolenoidal"],
                    help="test hook: corrupt the noise library to exercise failure paths")
    return parser


def _run(args) -> int:
    cfg = load_config(args.config)
    expected = _COMMAND_SCENARIO[args.command]
    if cfg.scenario != expected:
        raise ConfigError(
            f"config declares scenario {cfg.scenario!r} but the subcommand expects {expected!r}")
    if args.seed is not None:
        cfg.seed = args.seed
    if args.stride is not None:
        if args.stride < 1:
            raise ConfigError("--stride must be >= 1")
        cfg.stepping["stride"] = args.stride
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg.workers = args.workers

    runner = {
        SINGLE: experiments.run_single,
        ENSEMBLE: experiments.run_ensemble,
        SWEEP: experiments.run_viscosity_sweep,
        WEAK_STRONG: experiments.run_weak_strong,
        SCHEME_COMPARE: experiments.run_scheme_compare,
    }[cfg.scenario]
    manifest_path = runner(cfg, args.out)
    manifest = json.loads(manifest_path.read_text())
    print(f"wrote {manifest_path}")
    for name in manifest["files"]:
        print(f"  {name}")
    if cfg.scenario == WEAK_STRONG and manifest["summary"].get("invalidated"):
        print("weak-strong comparison invalidated by a guard/floor trip", file=sys.stderr)
        return 4
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "selftest":
            return 0 if experiments.selftest(inject_fault=args.inject_fault) else 1
        return _run(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
