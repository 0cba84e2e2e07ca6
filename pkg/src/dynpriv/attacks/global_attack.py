"""Global eavesdropper: reconstruct every node's equation from the full trajectory."""

from __future__ import annotations

import logging

import numpy as np

from ..lae import CanonicalEquation, canonical_row
from ..netcore import WeightMatrix, as_weight_matrix
from ..protocols import Trajectory
from .models import AttackError, NodeRecoverability, RecoveredEquation

logger = logging.getLogger(__name__)

ZERO_TOL = 1e-9


def _mixing_gaps(traj: Trajectory, W: WeightMatrix | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per step t, x(t+1) - W x(t) and W x(t), each (T, n, m)."""
    if len(traj) < 2:
        raise AttackError("Trajectory must contain at least one step")
    w = as_weight_matrix(W).matrix
    if w.shape[0] != traj.n:
        raise AttackError(f"Weight matrix of size {w.shape[0]} does not match n={traj.n}")
    states = traj.array()
    mixed = np.einsum("ij,tjk->tik", w, states[:-1])
    return states[1:] - mixed, mixed


def _zero_tol(states: np.ndarray) -> np.ndarray:
    """Per (t, i) threshold 1e-9 * (1 + ||x_i(t)||)."""
    return ZERO_TOL * (1.0 + np.linalg.norm(states, axis=-1))


def _affine_rank(points: np.ndarray) -> int:
    diffs = np.diff(points, axis=0)
    if diffs.size == 0:
        return 0
    scale = 1.0 + float(np.max(np.linalg.norm(points, axis=1)))
    return int(np.linalg.matrix_rank(diffs, tol=ZERO_TOL * scale))


def recoverability_report(
    traj: Trajectory, W: WeightMatrix | np.ndarray, alpha: float
) -> list[NodeRecoverability]:
    """Which nodes' equations the trajectory reveals.

    Condition (a) holds at the first step whose projection correction is
    nonzero; condition (b) needs m affinely independent states, i.e. an
    affine rank of at least m - 1.
    """
    if len(traj) < 3:
        raise AttackError("Recoverability needs a trajectory of at least 2 steps")
    gaps, _ = _mixing_gaps(traj, W)
    states = traj.array()
    tol = _zero_tol(states[:-1])
    big = np.linalg.norm(gaps, axis=-1) > tol

    report = []
    for i in range(traj.n):
        hits = np.flatnonzero(big[:, i])
        a_time = int(hits[0]) if hits.size else None
        rank = _affine_rank(states[:, i, :])
        report.append(NodeRecoverability(
            node=i,
            condition_a_time=a_time,
            condition_b_rank=rank,
            recoverable=a_time is not None or rank >= traj.m - 1,
        ))
    return report


def _held_out(candidates: np.ndarray, used: int) -> int:
    others = [int(t) for t in candidates if t != used]
    return others[-1] if others else used


def _finish(rows: list, methods: list[str], residuals: list[float], m: int) -> RecoveredEquation:
    H = np.full((len(rows), m), np.nan)
    z = np.full(len(rows), np.nan)
    for i, row in enumerate(rows):
        if row is not None:
            H[i], z[i] = row
    finite = [r for r, method in zip(residuals, methods) if method != "failed"]
    residual = max(finite) if finite else float("nan")
    failed = methods.count("failed")
    if failed:
        logger.info("Recovered %d of %d rows", len(rows) - failed, len(rows))
    return RecoveredEquation(CanonicalEquation(H, z), methods, residual, residuals)


def global_attack_cpa(
    traj: Trajectory, W: WeightMatrix | np.ndarray, alpha: float
) -> RecoveredEquation:
    """Recover every node's equation from a CPA trajectory, up to row scaling.

    A nonzero correction d = x_i(s+1) - sum_j w_ij x_j(s) is alpha times the
    projection correction, so d is parallel to H_i and
    z_i is proportional to d.x_i(s) + ||d||^2 / alpha. Nodes that never leave
    their hyperplane fall back to the null direction of their state
    differences.
    """
    if not alpha > 0:
        raise AttackError(f"Step size alpha must be positive, got {alpha}")
    gaps, _ = _mixing_gaps(traj, W)
    states = traj.array()
    norms = np.linalg.norm(gaps, axis=-1)
    big = norms > _zero_tol(states[:-1])

    rows: list = []
    methods: list[str] = []
    residuals: list[float] = []
    for i in range(traj.n):
        hits = np.flatnonzero(big[:, i])
        if hits.size:
            s = int(hits[np.argmax(norms[hits, i])])
            d = gaps[s, i]
            h, z = canonical_row(d, d @ states[s, i] + (d @ d) / alpha)
            t = _held_out(hits, s)
            on_plane = states[t, i] + gaps[t, i] / alpha
            rows.append((h, z))
            methods.append("condition-a")
            residuals.append(abs(float(h @ on_plane) - z))
            continue

        points = states[:, i, :]
        if _affine_rank(points) >= traj.m - 1:
            diffs = np.diff(points, axis=0)
            normal = np.linalg.svd(diffs.reshape(-1, traj.m))[2][-1]
            h, z = canonical_row(normal, normal @ points[0])
            rows.append((h, z))
            methods.append("condition-b")
            residuals.append(abs(float(h @ points[-1]) - z))
            continue

        logger.debug("Node %d: neither recoverability condition holds", i)
        rows.append(None)
        methods.append("failed")
        residuals.append(float("nan"))
    return _finish(rows, methods, residuals, traj.m)


def global_attack_pca(traj: Trajectory, W: WeightMatrix | np.ndarray) -> RecoveredEquation:
    """Recover equations from a PCA trajectory with the step-one analogue of the CPA formula.

    The formula assumes x_i(t+1) = P_i(sum_j w_ij x_j(t)), which holds for a
    single node but not in general. The residual checks the recovered row
    against a held-out state x_i(t+1) and exposes the mismatch.
    """
    gaps, mixed = _mixing_gaps(traj, W)
    states = traj.array()
    norms = np.linalg.norm(gaps, axis=-1)
    big = norms > _zero_tol(states[:-1])

    rows: list = []
    methods: list[str] = []
    residuals: list[float] = []
    for i in range(traj.n):
        hits = np.flatnonzero(big[:, i])
        if not hits.size:
            rows.append(None)
            methods.append("failed")
            residuals.append(float("nan"))
            continue
        s = int(hits[np.argmax(norms[hits, i])])
        d = gaps[s, i]
        h, z = canonical_row(d, d @ mixed[s, i] + d @ d)
        t = _held_out(hits, s)
        rows.append((h, z))
        methods.append("condition-a")
        residuals.append(abs(float(h @ states[t + 1, i]) - z))
    return _finish(rows, methods, residuals, traj.m)
