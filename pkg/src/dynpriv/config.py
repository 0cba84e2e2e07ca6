"""Configuration management for dynpriv."""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .attacks.models import RecoveryOptions

_DEFAULT_CONFIG_DIR = Path.home() / ".config" / "dynpriv"

OUTPUT_DIR_ENV = "DYNPRIV_OUTPUT_DIR"


@dataclass
class IdentificationConfig:
    """Thresholds for passive and active identification."""

    cond_threshold: float = 1e10
    probe_cond_threshold: float = 1e6
    probe_max_tries: int = 100
    settle_tol: float = 1e-12
    max_periods: int = 20000
    gap_warning: float = 10.0


@dataclass
class RecoveryConfig:
    """Defaults for recover_equation."""

    max_iter: int = 200
    tol: float = 1e-8
    restarts: int = 1
    perturbation: float = 0.05

    def options(self, seed: int = 0, restarts: int | None = None) -> RecoveryOptions:
        return RecoveryOptions(
            max_iter=self.max_iter,
            tol=self.tol,
            restarts=self.restarts if restarts is None else restarts,
            seed=seed,
            perturbation=self.perturbation,
        )


@dataclass
class Config:
    output_dir: Path = field(default_factory=lambda: Path("runs"))
    workers: int = 1
    weight_tolerance: float = 1e-9
    divergence_threshold: float = 1e12
    plots: bool = True
    verbose: bool = False
    identification: IdentificationConfig = field(default_factory=IdentificationConfig)
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)

    @classmethod
    def load(cls, overrides: dict | None = None, config_path: Path | None = None) -> Config:
        """Load config from TOML file, then the environment, then CLI overrides."""
        config = cls()

        path = config_path or _DEFAULT_CONFIG_DIR / "config.toml"
        if path.exists():
            with open(path, "rb") as f:
                data = tomllib.load(f)
            config = cls._apply_dict(config, data)

        env_output = os.environ.get(OUTPUT_DIR_ENV)
        if env_output:
            config.output_dir = Path(env_output).expanduser()

        if overrides:
            config = cls._apply_dict(config, overrides)

        return config

    @classmethod
    def _apply_dict(cls, config: Config, data: dict) -> Config:
        if data.get("output_dir") is not None:
            config.output_dir = Path(data["output_dir"]).expanduser()
        if "workers" in data:
            config.workers = max(1, int(data["workers"]))
        if "weight_tolerance" in data:
            config.weight_tolerance = float(data["weight_tolerance"])
        if "divergence_threshold" in data:
            config.divergence_threshold = float(data["divergence_threshold"])
        if "plots" in data:
            config.plots = bool(data["plots"])
        if "verbose" in data:
            config.verbose = bool(data["verbose"])

        if "identification" in data:
            ident = data["identification"]
            for name in ("cond_threshold", "probe_cond_threshold", "settle_tol", "gap_warning"):
                if name in ident:
                    setattr(config.identification, name, float(ident[name]))
            for name in ("probe_max_tries", "max_periods"):
                if name in ident:
                    setattr(config.identification, name, int(ident[name]))

        if "recovery" in data:
            rec = data["recovery"]
            if "max_iter" in rec:
                config.recovery.max_iter = int(rec["max_iter"])
            if "tol" in rec:
                config.recovery.tol = float(rec["tol"])
            if "restarts" in rec:
                config.recovery.restarts = max(1, int(rec["restarts"]))
            if "perturbation" in rec:
                config.recovery.perturbation = float(rec["perturbation"])

        return config
