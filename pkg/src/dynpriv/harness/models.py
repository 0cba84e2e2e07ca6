"""Data models for experiment runs."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..lae import LinearEquation
from ..netcore import Graph, WeightMatrix
from ..ppsc import PpscMechanism
from ..protocols import DpParams, QuadraticObjectiveSet


@dataclass(eq=False)
class ExperimentConfig:
    """One validated experiment definition."""

    name: str
    graph: Graph
    weights: WeightMatrix
    protocol: str
    steps: int
    trials: int = 1
    seed: int = 0
    equation: LinearEquation | None = None
    objectives: QuadraticObjectiveSet | None = None
    protocol_params: dict[str, Any] = field(default_factory=dict)
    attack: str | None = None
    attack_params: dict[str, Any] = field(default_factory=dict)
    dp: DpParams | None = None
    mechanism: PpscMechanism | None = None
    outputs: Path | None = None
    source: Path | None = None

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def m(self) -> int:
        if self.equation is not None:
            return self.equation.m
        if self.objectives is not None:
            return self.objectives.m
        return int(self.protocol_params.get("m", 1))


@dataclass
class TrialResult:
    trial: int
    seed: int
    metrics: dict[str, Any]
    report: dict[str, Any] | None = None
    errors: list[float] | None = None


@dataclass
class RunArtifacts:
    """Paths written by one run, relative to out_dir, and the per-trial summary."""

    out_dir: Path
    summary: Path
    manifest: Path
    trajectories: list[Path] = field(default_factory=list)
    reports: list[Path] = field(default_factory=list)
    plots: list[Path] = field(default_factory=list)
    rows: list[dict[str, Any]] = field(default_factory=list)
    checks: dict[str, Any] = field(default_factory=dict)
    files: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(bool(v) for v in self.checks.values())
