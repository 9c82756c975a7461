"""
Command-line entry point.

    photonic-ppo train --policy reupload --episodes 1000 --agents 20 --out runs/r1 --hp.lr_policy=0.02
    photonic-ppo replay --manifest runs/r1/manifest.json
    photonic-ppo gates-selftest

Exit codes: 0 success, 1 self-test or replay mismatch, 2 configuration error,
3 numerical-domain abort (any agent aborted).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .exceptions import InvalidConfigError
from . import harness

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


class _ConfigArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ConfigArgumentError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="photonic-ppo", description="Photonic-circuit PPO on restricted CartPole.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    train = sub.add_parser("train", help="train a set of agents and write CSVs, plots and a manifest")
    train.add_argument("--policy", dest="policy_kind", choices=harness.POLICY_KINDS)
    train.add_argument("--layers", type=int)
    train.add_argument("--cutoff", type=int)
    train.add_argument("--episodes", type=int)
    train.add_argument("--agents", dest="num_agents", type=int)
    train.add_argument("--seed-base", dest="seed_base", type=int)
    train.add_argument("--config", type=Path, help="flat key = value file; unknown keys are errors")
    train.add_argument("--out", dest="output_dir")
    train.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    train.add_argument("--gradient-engine", dest="gradient_engine", choices=("adjoint", "finite-difference"))
    train.add_argument("--no-filter", dest="filter_enabled", action="store_const", const=False)
    train.add_argument("--workers", type=int, default=1)

    replay = sub.add_parser("replay", help="re-run a manifest and compare CSV hashes")
    replay.add_argument("--manifest", type=Path, required=True)
    replay.add_argument("--out", type=Path)
    replay.add_argument("--workers", type=int, default=1)

    gates = sub.add_parser("gates-selftest", help="check gate matrices against closed forms")
    gates.add_argument("--cutoff", type=int, default=16)
    return parser


def split_hp_overrides(argv: list[str]) -> tuple[list[str], dict[str, str]]:
    """Pull ``--hp.<name>=<value>`` (or ``--hp.<name> <value>``) out of ``argv``."""
    rest, hp = [], {}
    i = 0
    while i < len(argv):
        arg = argv[i]
        if arg.startswith("--hp."):
            key, sep, value = arg[5:].partition("=")
            if not sep:
                if i + 1 >= len(argv):
                    raise _ConfigArgumentError(f"{arg} needs a value.")
                value = argv[i + 1]
                i += 1
            if not key:
                raise _ConfigArgumentError(f"malformed override {arg!r}.")
            hp[key] = value
        else:
            rest.append(arg)
        i += 1
    return rest, hp


def _train(args, hp_overrides) -> int:
    file_values = harness.parse_config_text(args.config.read_text()) if args.config else {}
    overrides = {k: getattr(args, k) for k in (
        "policy_kind", "layers", "cutoff", "episodes", "num_agents", "seed_base",
        "output_dir", "checkpoint_every", "gradient_engine", "filter_enabled",
    )}
    cfg = harness.build_config(file_values, overrides, hp_overrides)
    records, agg, manifest = harness.run_experiment(cfg, workers=args.workers)
    for rec in records:
        last = rec.moving_average[-1] if rec.rewards else float("nan")
        print(f"seed {rec.seed}: {rec.status}, {len(rec.rewards)} episodes, final moving average {last:.1f}")
    if agg is None:
        print("no surviving agents; aggregate CSV not written")
    print(f"outputs in {cfg.output_dir}")
    return EXIT_NUMERICAL if any(r.status == "aborted" for r in records) else EXIT_OK


def _replay(args) -> int:
    same, _ = harness.replay(args.manifest, args.out, workers=args.workers)
    print("replay identical" if same else "replay differs from recorded outputs")
    return EXIT_OK if same else EXIT_FAILED


def _gates(args) -> int:
    from .selftest import run_gate_oracles

    results = run_gate_oracles(args.cutoff)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv, hp_overrides = split_hp_overrides(argv)
        args = build_parser().parse_args(argv)
        if hp_overrides and args.command != "train":
            raise _ConfigArgumentError("--hp.* overrides only apply to train.")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "train":
            return _train(args, hp_overrides)
        if args.command == "replay":
            return _replay(args)
        return _gates(args)
    except (_ConfigArgumentError, InvalidConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
