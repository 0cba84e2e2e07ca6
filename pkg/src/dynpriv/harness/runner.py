"""Run experiments: trials in a worker pool, artifacts through one writer."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable

import numpy as np

from ..attacks.global_attack import global_attack_cpa, global_attack_pca
from ..attacks.identification import active_identify, make_probe, passive_identify, spectrum_distance
from ..attacks.models import IdentificationError, ObservationModel
from ..config import Config
from ..lae import canonical_distance, canonical_form, solve_exact
from ..protocols import (
    Trajectory,
    closed_loop,
    run_average_consensus,
    run_cpa,
    run_dgd,
    run_dp_dles,
    run_pca,
    run_ppsc_consensus,
    run_ppsc_dgd,
    run_ppsc_les,
)
from ..randomness import derive_seed, substream
from .artifacts import ArtifactWriter
from .models import ExperimentConfig, RunArtifacts, TrialResult
from .plotting import plot_lines

logger = logging.getLogger(__name__)

EQUIVALENCE_TOL = 1e-6

ProtocolRunner = Callable[[ExperimentConfig, np.ndarray, int, Config], Trajectory]
AttackRunner = Callable[[ExperimentConfig, Trajectory, int, Config], dict[str, Any]]


def initial_state(cfg: ExperimentConfig, seed: int) -> np.ndarray:
    """Explicit x0 from the protocol parameters, or uniform draws on [-r, r]."""
    explicit = cfg.protocol_params.get("x0")
    if explicit is not None:
        return np.asarray(explicit, dtype=float).reshape(cfg.n, cfg.m)
    r = float(cfg.protocol_params.get("x0_range", 1.0))
    return substream(seed, 0).uniform(-r, r, (cfg.n, cfg.m))


def _alpha(cfg: ExperimentConfig) -> float:
    return float(cfg.protocol_params.get("alpha", 0.0))


def _consensus(cfg: ExperimentConfig, x0: np.ndarray, seed: int, config: Config) -> Trajectory:
    beta = cfg.protocol_params.get("beta")
    return run_average_consensus(cfg.weights, x0 if beta is None else np.asarray(beta, dtype=float), cfg.steps)


def _cpa(cfg: ExperimentConfig, x0: np.ndarray, seed: int, config: Config) -> Trajectory:
    return run_cpa(cfg.weights, cfg.equation, _alpha(cfg), x0, cfg.steps, config.divergence_threshold)


def _pca(cfg: ExperimentConfig, x0: np.ndarray, seed: int, config: Config) -> Trajectory:
    return run_pca(cfg.weights, cfg.equation, x0, cfg.steps, config.divergence_threshold)


def _dgd(cfg: ExperimentConfig, x0: np.ndarray, seed: int, config: Config) -> Trajectory:
    return run_dgd(cfg.weights, cfg.objectives, x0, cfg.steps, config.divergence_threshold)


def _dp_dles(cfg: ExperimentConfig, x0: np.ndarray, seed: int, config: Config) -> Trajectory:
    return run_dp_dles(
        cfg.weights,
        cfg.equation,
        cfg.dp,
        x0,
        cfg.steps,
        derive_seed(seed, 1),
        exclude_self=bool(cfg.protocol_params.get("exclude_self", False)),
        divergence_threshold=config.divergence_threshold,
    )


def _ppsc_consensus(cfg: ExperimentConfig, x0: np.ndarray, seed: int, config: Config) -> Trajectory:
    beta = cfg.protocol_params.get("beta")
    values = x0 if beta is None else np.asarray(beta, dtype=float)
    return run_ppsc_consensus(
        cfg.graph, cfg.mechanism, values, cfg.steps, derive_seed(seed, 2), config.divergence_threshold
    )


def _ppsc_les(cfg: ExperimentConfig, x0: np.ndarray, seed: int, config: Config) -> Trajectory:
    return run_ppsc_les(
        cfg.graph,
        cfg.equation,
        cfg.mechanism,
        x0,
        cfg.steps,
        derive_seed(seed, 2),
        inner_steps=cfg.protocol_params.get("inner_steps"),
        weights=cfg.weights,
        divergence_threshold=config.divergence_threshold,
    )


def _ppsc_dgd(cfg: ExperimentConfig, x0: np.ndarray, seed: int, config: Config) -> Trajectory:
    return run_ppsc_dgd(
        cfg.graph, cfg.objectives, cfg.mechanism, x0, cfg.steps, derive_seed(seed, 2), config.divergence_threshold
    )


PROTOCOL_RUNNERS: dict[str, ProtocolRunner] = {
    "consensus": _consensus,
    "cpa": _cpa,
    "pca": _pca,
    "dgd": _dgd,
    "dp_dles": _dp_dles,
    "ppsc_consensus": _ppsc_consensus,
    "ppsc_les": _ppsc_les,
    "ppsc_dgd": _ppsc_dgd,
}


def _solution_gap(recovered, cfg: ExperimentConfig) -> float:
    """Distance from the recovered equation's solution to the true one; nan if either is missing."""
    target = reference_solution(cfg)
    if target is None or not recovered.complete:
        return float("nan")
    exact = solve_exact(recovered.as_linear_equation())
    if exact is None:
        return float("nan")
    return float(np.linalg.norm(exact.solution - target))


def _reconstruction(recovered, cfg: ExperimentConfig) -> dict[str, Any]:
    distance = canonical_distance(recovered.equation, canonical_form(cfg.equation))
    return {
        "equivalent_to_truth": distance <= EQUIVALENCE_TOL,
        "max_deviation": distance,
        "solution_gap": _solution_gap(recovered, cfg),
        "failed_nodes": len(recovered.failed_nodes),
        "attack_residual": recovered.residual,
        "_report": recovered.to_dict(),
    }


def _global_cpa(cfg: ExperimentConfig, traj: Trajectory, seed: int, config: Config) -> dict[str, Any]:
    return _reconstruction(global_attack_cpa(traj, cfg.weights, _alpha(cfg)), cfg)


def _global_pca(cfg: ExperimentConfig, traj: Trajectory, seed: int, config: Config) -> dict[str, Any]:
    return _reconstruction(global_attack_pca(traj, cfg.weights), cfg)


def _observer(cfg: ExperimentConfig) -> ObservationModel:
    node = int(cfg.attack_params.get("observer", 0))
    exact = solve_exact(cfg.equation)
    known = None if exact is None else exact.solution
    if "solution" in cfg.attack_params:
        known = np.asarray(cfg.attack_params["solution"], dtype=float)
    return ObservationModel.at_node(cfg.graph, node, known)


def _identification_metrics(realization, cfg: ExperimentConfig) -> dict[str, Any]:
    F = closed_loop(cfg.weights, cfg.equation, _alpha(cfg), verify=False).F
    distance = spectrum_distance(realization.F_star, F)
    return {
        "identified": True,
        "eigen_distance": distance,
        "_report": {
            "F_star": realization.F_star,
            "C_star": realization.C_star,
            "eigenvalues": np.sort_complex(realization.eigenvalues()).real,
        },
    }


def _passive(cfg: ExperimentConfig, traj: Trajectory, seed: int, config: Config) -> dict[str, Any]:
    try:
        realization = passive_identify(
            _observer(cfg), traj, cond_threshold=config.identification.cond_threshold
        )
    except IdentificationError as e:
        logger.debug("Passive identification failed: %s", e)
        return {"identified": False, "eigen_distance": float("nan"), "_report": {"error": str(e)}}
    return _identification_metrics(realization, cfg)


def _active(cfg: ExperimentConfig, traj: Trajectory, seed: int, config: Config) -> dict[str, Any]:
    ident = config.identification
    try:
        probe = make_probe(cfg.n, cfg.m, derive_seed(seed, 3), ident.probe_cond_threshold, ident.probe_max_tries)
        realization = active_identify(
            _observer(cfg),
            cfg.weights,
            cfg.equation,
            _alpha(cfg),
            probe,
            settle_periods=cfg.attack_params.get("settle_periods"),
            seed=derive_seed(seed, 4),
            settle_tol=ident.settle_tol,
            max_periods=ident.max_periods,
            gap_warning=ident.gap_warning,
        )
    except IdentificationError as e:
        logger.debug("Active identification failed: %s", e)
        return {"identified": False, "eigen_distance": float("nan"), "_report": {"error": str(e)}}
    return _identification_metrics(realization, cfg)


ATTACK_RUNNERS: dict[str, AttackRunner] = {
    "global_cpa": _global_cpa,
    "global_pca": _global_pca,
    "passive": _passive,
    "active": _active,
}


def reference_solution(cfg: ExperimentConfig) -> np.ndarray | None:
    if cfg.equation is not None:
        exact = solve_exact(cfg.equation)
        return None if exact is None else exact.solution
    if cfg.objectives is not None:
        return cfg.objectives.minimizer()
    return None


def error_curve(traj: Trajectory, target: np.ndarray) -> np.ndarray:
    """||mean_i x_i(t) - target|| for every t."""
    return np.linalg.norm(traj.averages() - target[None, :], axis=1)


def run_trial(cfg: ExperimentConfig, trial: int, config: Config) -> tuple[TrialResult, Trajectory]:
    seed = derive_seed(cfg.seed, trial)
    traj = PROTOCOL_RUNNERS[cfg.protocol](cfg, initial_state(cfg, seed), seed, config)
    final = traj.final
    metrics: dict[str, Any] = {
        "trial": trial,
        "seed": seed,
        "steps": traj.steps,
        "diverged": traj.diverged,
        "final_disagreement": float(np.max(np.linalg.norm(final - final.mean(axis=0), axis=1))),
    }
    errors = None
    target = reference_solution(cfg)
    if target is not None:
        errors = error_curve(traj, target)
        metrics["final_error"] = float(errors[-1])

    report = None
    if cfg.attack is not None:
        attack = ATTACK_RUNNERS[cfg.attack](cfg, traj, seed, config)
        report = attack.pop("_report", None)
        metrics.update(attack)
    return TrialResult(trial=trial, seed=seed, metrics=metrics, report=report, errors=errors), traj


def run_experiment(
    cfg: ExperimentConfig,
    config: Config | None = None,
    out_dir: Path | None = None,
    keep_trajectories: int | None = None,
) -> RunArtifacts:
    """Run every trial of cfg and write its artifacts.

    Args:
        cfg: Validated experiment.
        config: Toolkit settings; loaded from disk when omitted.
        out_dir: Output directory, overriding cfg.outputs and the config.
        keep_trajectories: Write trajectory CSVs only for the first trials.

    Returns:
        Paths written and the summary rows, sorted by trial.
    """
    config = config or Config.load()
    root = out_dir or cfg.outputs or config.output_dir / cfg.name
    logger.info("Running %s: %d trial(s) of %s", cfg.name, cfg.trials, cfg.protocol)

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        outcomes = list(pool.map(lambda t: run_trial(cfg, t, config), range(cfg.trials)))
    outcomes.sort(key=lambda pair: pair[0].trial)

    writer = ArtifactWriter(root)
    artifacts = RunArtifacts(out_dir=root, summary=root / "summary.csv", manifest=root / "manifest.json")
    for result, traj in outcomes:
        if keep_trajectories is None or result.trial < keep_trajectories:
            artifacts.trajectories.append(
                writer.write_trajectory(f"trajectories/trial_{result.trial:04d}.csv", traj)
            )
        if result.report is not None:
            artifacts.reports.append(
                writer.write_json(f"reports/trial_{result.trial:04d}.json", {"trial": result.trial, **result.report})
            )
        artifacts.rows.append(result.metrics)
    writer.write_records("summary.csv", artifacts.rows)

    curves = [r.errors for r, _ in outcomes if r.errors is not None]
    if curves and len({len(c) for c in curves}) == 1:
        mean = np.mean(curves, axis=0)
        writer.write_csv("error_vs_t.csv", ["t", "mean_error"], enumerate(mean.tolist()))
        if config.plots:
            svg = plot_lines(writer.path("error_vs_t.svg"), np.arange(mean.size), {cfg.name: mean}, "t", "error")
            if svg is not None:
                artifacts.plots.append(writer.record("error_vs_t.svg"))

    if cfg.attack in ("global_cpa", "global_pca"):
        hits = sum(bool(r["equivalent_to_truth"]) for r in artifacts.rows)
        logger.info("Reconstruction equivalent to truth in %d/%d trials", hits, cfg.trials)
    writer.write_manifest()
    artifacts.files = list(writer.files)
    return artifacts
