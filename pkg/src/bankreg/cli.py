"""Command-line entry point: ``bankreg <experiment> [--config F] [--seed S] [--out F]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from bankreg import harness
from bankreg.errors import ContractViolation, SimulationTimeout

log = logging.getLogger("bankreg")

HELP = {
    "guaranteed-bw": "single-bank PLL bandwidth against the one-line-per-tRC bound",
    "mlp-sweep": "PLL bandwidth over list counts for 1x/4x single-bank and all-bank",
    "attack": "unregulated victim slowdown under ABr/ABw/SBr/SBw attackers",
    "regulate": "victim slowdown and attacker throughput, per-bank vs all-bank regulation",
    "bank-scaling": "regulated throughput as the DRAM bank count grows",
    "write-batching": "bus mode switches with and without write watermarks",
    "revmap": "recover a bank map from simulated timing probes",
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bankreg", description="DRAM bank-aware bandwidth regulation experiments")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True, metavar="experiment")
    for name in harness.EXPERIMENTS:
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--config", help="JSON config merged over the built-in defaults")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="write results here (.json for JSON, anything else CSV)")
        p.add_argument("--format", choices=("csv", "json"), help="force the output format")
        p.add_argument("--trace", help="write per-command DRAM traces (one CSV per simulation)")
        if name == "revmap":
            p.add_argument("--map", help="platform name (pi4, pi5, intel, agx, firesim), inline spec, or 'hidden'")
            p.add_argument("--samples", type=int, help="sampled addresses per bank")
    return ap


def _overrides(args: argparse.Namespace) -> dict:
    over: dict = {}
    if args.trace:
        over["trace"] = args.trace
    if args.command == "revmap":
        exp = {}
        if args.map:
            exp["map"] = args.map
        if args.samples is not None:
            exp["samples_per_bank"] = args.samples
        if exp:
            over["experiment"] = exp
    return over


def _check_out(path: str | None) -> None:
    # Fail before a long simulation rather than after it.
    if path is None:
        return
    parent = Path(path).resolve().parent
    if not parent.is_dir() or not os.access(parent, os.W_OK):
        raise OSError(f"cannot write results to {path}: directory missing or read-only")


def _load(args: argparse.Namespace) -> harness.ExperimentConfig:
    user = harness.read_config_file(args.config) if args.config else {}
    user = harness.deep_merge(user, _overrides(args))
    return harness.build_config(args.command, user, args.seed, args.out)


def _print_revmap(res: harness.ExperimentResult) -> None:
    m = {name: v for name, _, v in res.metrics}
    print(m["recovered_map"] or "(no map recovered)")
    print(f"confidence {m['confidence']:.4f}  rank {m['rank']}/{m['expected_bits']}  samples {m['samples']}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        _check_out(args.out)
        cfg = _load(args)
        log.info("running %s (seed %d)", cfg.experiment, cfg.seed)
        results = harness.run_experiment(cfg)
        if args.command == "revmap":
            _print_revmap(results[0])
            if args.out:
                harness.emit_results(results, args.out, args.format)
        else:
            text = harness.emit_results(results, args.out, args.format)
            if not args.out:
                sys.stdout.write(text)
    except (harness.ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SimulationTimeout, ContractViolation, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
