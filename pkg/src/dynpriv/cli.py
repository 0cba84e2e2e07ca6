"""CLI entry point for dynpriv."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .attacks.models import AttackError, IdentificationError
from .config import Config
from .dpbudget import BudgetError, BudgetInput, calibrate_c, calibrate_lambda, certify
from .harness.artifacts import ArtifactWriter
from .harness.loader import ConfigError, load_experiment, load_json_input
from .harness.reproduce import EXAMPLES, ReproductionError, reproduce
from .harness.runner import run_experiment
from .lae import EquationError
from .netcore import GraphError
from .ppsc import (
    MechanismError,
    check_graph_compliance,
    check_sum_consistency,
    empirical_identifiability,
)
from .protocols import ProtocolError
from .randomness import substream

logger = logging.getLogger(__name__)

# Input and configuration problems exit with 2.
_INPUT_ERRORS = (
    ConfigError,
    BudgetError,
    GraphError,
    EquationError,
    MechanismError,
    ProtocolError,
    IdentificationError,
    AttackError,
)


def _setup_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        format="%(asctime)s [%(levelname)s] %(message)s",
        level=level,
        stream=sys.stderr,
    )


def _out_dir(args: argparse.Namespace) -> Path | None:
    return Path(args.out).expanduser() if getattr(args, "out", None) else None


def _handle_simulate(args: argparse.Namespace, config: Config) -> int:
    """Handle simulate command."""
    cfg = dataclasses.replace(load_experiment(Path(args.config).expanduser()), attack=None)
    artifacts = run_experiment(cfg, config, _out_dir(args))
    diverged = sum(bool(r["diverged"]) for r in artifacts.rows)
    print(f"Ran {len(artifacts.rows)} trial(s) of {cfg.protocol}; {diverged} diverged")
    print(f"Artifacts: {artifacts.out_dir}")
    return 0


def _handle_attack(args: argparse.Namespace, config: Config) -> int:
    """Handle attack command."""
    cfg = load_experiment(Path(args.config).expanduser())
    if cfg.attack is None:
        raise ConfigError(f"{args.config}: no 'attack' section")
    artifacts = run_experiment(cfg, config, _out_dir(args))
    if cfg.attack in ("global_cpa", "global_pca"):
        hits = sum(bool(r["equivalent_to_truth"]) for r in artifacts.rows)
        print(f"Equivalent to truth in {hits}/{len(artifacts.rows)} trial(s)")
    else:
        hits = sum(bool(r["identified"]) for r in artifacts.rows)
        print(f"Identified in {hits}/{len(artifacts.rows)} trial(s)")
    print(f"Artifacts: {artifacts.out_dir}")
    return 0


def _handle_ppsc_check(args: argparse.Namespace, config: Config) -> int:
    """Handle ppsc-check command."""
    cfg = load_experiment(Path(args.config).expanduser())
    if cfg.mechanism is None:
        raise ConfigError(f"{args.config}: protocol has no 'mechanism'")
    rng = substream(cfg.seed, 5)
    beta = cfg.protocol_params.get("beta")
    beta_a = rng.uniform(-1.0, 1.0, (cfg.n, cfg.m)) if beta is None else np.asarray(beta, dtype=float)
    shift = rng.standard_normal(beta_a.shape)
    beta_b = beta_a + shift - shift.mean(axis=0)

    consistency = check_sum_consistency(cfg.mechanism, beta_a, args.trials, cfg.seed)
    compliant = check_graph_compliance(cfg.mechanism.apply(beta_a, cfg.seed).log, cfg.graph)
    ident = empirical_identifiability(cfg.mechanism, beta_a, beta_b, args.samples, cfg.seed)

    root = _out_dir(args) or cfg.outputs or config.output_dir / cfg.name
    writer = ArtifactWriter(root)
    writer.write_json("ppsc_check.json", {
        "mechanism": cfg.mechanism.to_dict(),
        "sum_consistency": dataclasses.asdict(consistency),
        "graph_compliant": compliant,
        "identifiability": dataclasses.asdict(ident),
    })
    writer.write_manifest()

    print(f"Sum consistency: max relative error {consistency.max_rel_error:.3e}")
    print(f"Graph compliant: {compliant}")
    print(f"Distinguishable by repeated invocation: {ident.distinguishable}")
    return 0 if consistency.ok and compliant else 1


def _handle_dp(args: argparse.Namespace, config: Config) -> int:
    """Handle dp budget and dp calibrate commands."""
    data = load_json_input(Path(args.input).expanduser())
    try:
        inp = BudgetInput.from_dict(data)
    except KeyError as e:
        raise ConfigError(f"{args.input}: missing key {e}") from e
    epsilon = args.epsilon if args.epsilon is not None else data.get("epsilon")
    if epsilon is None:
        raise ConfigError(f"{args.input}: no target epsilon given")

    if args.dp_command == "budget":
        cert = certify(inp, float(epsilon))
        print(f"Budget: {cert.lhs:.6g} (epsilon {cert.epsilon:g})")
        print(f"Certified: {cert.certified}")
        return 0 if cert.certified else 1

    print(f"c = {calibrate_c(float(epsilon), inp):.6g}")
    if inp.c is not None:
        print(f"lambda = {calibrate_lambda(float(epsilon), inp):.6g}")
    return 0


def _handle_reproduce(args: argparse.Namespace, config: Config) -> int:
    """Handle reproduce command."""
    try:
        artifacts = reproduce(args.example, _out_dir(args), config)
    except ReproductionError as e:
        print(str(e))
        return 1
    for key in sorted(artifacts.checks):
        print(f"{key}: {artifacts.checks[key]}")
    print(f"Artifacts: {artifacts.out_dir}")
    return 0


def _add_common(parser: argparse.ArgumentParser, out: bool = True) -> None:
    if out:
        parser.add_argument("--out", type=str, help="Output directory")
    parser.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="dynpriv",
        description="Simulate consensus-based solvers and the eavesdropper attacks against them",
    )
    subparsers = parser.add_subparsers(dest="command")

    simulate_parser = subparsers.add_parser("simulate", help="Run the protocol of an experiment")
    simulate_parser.add_argument("config", type=str, help="Experiment JSON file")
    _add_common(simulate_parser)

    attack_parser = subparsers.add_parser("attack", help="Run the protocol and its configured attack")
    attack_parser.add_argument("config", type=str, help="Experiment JSON file")
    _add_common(attack_parser)

    ppsc_parser = subparsers.add_parser("ppsc-check", help="Check a summation mechanism's properties")
    ppsc_parser.add_argument("config", type=str, help="Experiment JSON file with a mechanism")
    ppsc_parser.add_argument(
        "--trials", type=int, default=100,
        help="Invocations for the sum-consistency check (default: 100)"
    )
    ppsc_parser.add_argument(
        "--samples", type=int, default=2000,
        help="Invocations per input for the identifiability test (default: 2000)"
    )
    _add_common(ppsc_parser)

    dp_parser = subparsers.add_parser("dp", help="Privacy budget arithmetic")
    dp_subparsers = dp_parser.add_subparsers(dest="dp_command")
    for name, help_text in (("budget", "Evaluate and certify a budget"), ("calibrate", "Calibrate c and lambda")):
        sub = dp_subparsers.add_parser(name, help=help_text)
        sub.add_argument("input", type=str, help="Budget input JSON file")
        sub.add_argument("--epsilon", type=float, default=None, help="Target epsilon")
        _add_common(sub, out=False)

    reproduce_parser = subparsers.add_parser("reproduce", help="Reproduce a built-in example")
    reproduce_parser.add_argument("example", choices=EXAMPLES)
    _add_common(reproduce_parser)

    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return 1

    _setup_logging(getattr(args, "verbose", False))

    overrides = {"verbose": True} if getattr(args, "verbose", False) else {}
    config = Config.load(overrides)

    handlers = {
        "simulate": _handle_simulate,
        "attack": _handle_attack,
        "ppsc-check": _handle_ppsc_check,
        "dp": _handle_dp,
        "reproduce": _handle_reproduce,
    }
    if args.command == "dp" and not args.dp_command:
        dp_parser.print_help()
        return 1

    try:
        return handlers[args.command](args, config)
    except _INPUT_ERRORS as e:
        logger.debug("Input error", exc_info=True)
        print(f"Error: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
