"""Parse experiment definitions from JSON.

Validation errors name the file and, where it can be found, the line of
the offending key.
"""

from __future__ import annotations

import json
import logging
import re
from pathlib import Path
from typing import Any

import numpy as np

from ..lae import EquationError, LinearEquation, convex_set_from_dict
from ..netcore import GraphError, build_graph, weights_for_graph
from ..ppsc import MechanismError, mechanism_from_dict
from ..protocols import DpParams, ProtocolError, QuadraticObjectiveSet
from .models import ExperimentConfig

logger = logging.getLogger(__name__)

PROTOCOLS = (
    "consensus",
    "cpa",
    "pca",
    "dgd",
    "dp_dles",
    "ppsc_consensus",
    "ppsc_les",
    "ppsc_dgd",
)
ATTACKS = ("global_cpa", "global_pca", "passive", "active")

_NEEDS_EQUATION = {"cpa", "pca", "dp_dles", "ppsc_les"}
_NEEDS_OBJECTIVES = {"dgd", "ppsc_dgd"}
_NEEDS_MECHANISM = {"ppsc_consensus", "ppsc_les", "ppsc_dgd"}
_ATTACK_PROTOCOL = {"global_cpa": "cpa", "global_pca": "pca", "passive": "cpa", "active": "cpa"}


class ConfigError(ValueError):
    """Raised when an experiment definition is invalid."""


class _Source:
    def __init__(self, text: str, path: Path | None) -> None:
        self.text = text
        self.path = path

    def line_of(self, key: str) -> int | None:
        match = re.search(rf'"{re.escape(key)}"\s*:', self.text)
        if match is None:
            return None
        return self.text.count("\n", 0, match.start()) + 1

    def fail(self, message: str, key: str | None = None) -> ConfigError:
        where = str(self.path) if self.path else "<config>"
        line = self.line_of(key) if key else None
        if line is not None:
            where = f"{where}:{line}"
        return ConfigError(f"{where}: {message}")


def load_experiment(path: Path) -> ExperimentConfig:
    """Read and validate an experiment JSON file."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config ({e})") from e
    return parse_experiment(text, path)


def parse_experiment(text: str, path: Path | None = None) -> ExperimentConfig:
    src = _Source(text, path)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        where = str(path) if path else "<config>"
        raise ConfigError(f"{where}:{e.lineno}: invalid JSON ({e.msg})") from e
    if not isinstance(data, dict):
        raise src.fail("top level must be an object")
    return experiment_from_dict(data, src)


def experiment_from_dict(data: dict[str, Any], src: _Source | None = None) -> ExperimentConfig:
    src = src or _Source(json.dumps(data, indent=2), None)

    protocol_data = _section(data, "protocol", src)
    protocol = protocol_data.get("name")
    if protocol not in PROTOCOLS:
        raise src.fail(f"unknown protocol {protocol!r}; expected one of {', '.join(PROTOCOLS)}", "protocol")

    attack_data = data.get("attack")
    attack = None
    attack_params: dict[str, Any] = {}
    if attack_data is not None:
        if not isinstance(attack_data, dict):
            raise src.fail("attack must be an object", "attack")
        attack = attack_data.get("name")
        if attack not in ATTACKS:
            raise src.fail(f"unknown attack {attack!r}; expected one of {', '.join(ATTACKS)}", "attack")
        if _ATTACK_PROTOCOL[attack] != protocol:
            raise src.fail(f"attack {attack!r} needs protocol {_ATTACK_PROTOCOL[attack]!r}", "attack")
        attack_params = {k: v for k, v in attack_data.items() if k != "name"}

    trials = data.get("trials", 1)
    if not isinstance(trials, int) or trials < 1:
        raise src.fail(f"trials must be a positive integer, got {trials!r}", "trials")
    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        raise src.fail(f"seed must be an integer, got {seed!r}", "seed")
    steps = protocol_data.get("steps", protocol_data.get("rounds", 50))
    if not isinstance(steps, int) or steps < 0:
        raise src.fail(f"steps must be a non-negative integer, got {steps!r}", "steps")

    graph_data = _section(data, "graph", src)
    try:
        graph = build_graph(int(graph_data["n"]), graph_data.get("edges", []))
        weights = weights_for_graph(graph, data.get("weights"))
    except KeyError as e:
        raise src.fail(f"graph is missing {e}", "graph") from e
    except GraphError as e:
        raise src.fail(str(e), "weights" if "weights" in data else "graph") from e

    equation = None
    if "equation" in data:
        try:
            equation = LinearEquation(
                np.asarray(data["equation"]["H"], dtype=float),
                np.asarray(data["equation"]["z"], dtype=float),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise src.fail(f"invalid equation: {e}", "equation") from e
        if equation.n != graph.n:
            raise src.fail(f"equation has {equation.n} rows for {graph.n} nodes", "equation")
    elif protocol in _NEEDS_EQUATION:
        raise src.fail(f"protocol {protocol!r} needs an equation", "protocol")

    objectives = None
    if "objectives" in data:
        try:
            objectives = QuadraticObjectiveSet.from_dict(data["objectives"])
        except (KeyError, TypeError, ProtocolError) as e:
            raise src.fail(f"invalid objectives: {e}", "objectives") from e
        if objectives.n != graph.n:
            raise src.fail(f"{objectives.n} objectives for {graph.n} nodes", "objectives")
    elif protocol in _NEEDS_OBJECTIVES:
        raise src.fail(f"protocol {protocol!r} needs objectives", "protocol")

    dp = None
    if protocol == "dp_dles":
        dp_data = protocol_data.get("dp")
        if not isinstance(dp_data, dict):
            raise src.fail("protocol 'dp_dles' needs a 'dp' object", "protocol")
        try:
            dp = DpParams(
                c=float(dp_data["c"]),
                phi=float(dp_data["phi"]),
                lam=float(dp_data["lambda"]),
                psi=float(dp_data["psi"]),
                omega=convex_set_from_dict(dp_data["omega"]),
            )
        except KeyError as e:
            raise src.fail(f"dp is missing {e}", "dp") from e
        except (ProtocolError, EquationError) as e:
            raise src.fail(str(e), "dp") from e

    mechanism = None
    if protocol in _NEEDS_MECHANISM or "mechanism" in protocol_data:
        mech_data = protocol_data.get("mechanism")
        if not isinstance(mech_data, dict):
            raise src.fail(f"protocol {protocol!r} needs a 'mechanism' object", "protocol")
        try:
            mechanism = mechanism_from_dict(mech_data, graph)
        except MechanismError as e:
            raise src.fail(str(e), "mechanism") from e

    if protocol in ("cpa",) and not float(protocol_data.get("alpha", 0)) > 0:
        raise src.fail("protocol 'cpa' needs alpha > 0", "alpha")

    outputs = data.get("outputs")
    params = {k: v for k, v in protocol_data.items() if k not in ("name", "dp", "mechanism")}
    return ExperimentConfig(
        name=str(data.get("name", "experiment")),
        graph=graph,
        weights=weights,
        protocol=protocol,
        steps=steps,
        trials=trials,
        seed=seed,
        equation=equation,
        objectives=objectives,
        protocol_params=params,
        attack=attack,
        attack_params=attack_params,
        dp=dp,
        mechanism=mechanism,
        outputs=Path(outputs) if outputs else None,
        source=src.path,
    )


def _section(data: dict, key: str, src: _Source) -> dict:
    value = data.get(key)
    if not isinstance(value, dict):
        raise src.fail(f"missing or invalid '{key}' object", key if key in data else None)
    return value


def load_json_input(path: Path) -> dict:
    """Read a plain JSON object, mapping failures to ConfigError."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"{path}: cannot read input ({e})") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}: invalid JSON ({e.msg})") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data
