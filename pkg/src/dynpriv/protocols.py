"""Distributed recursions run as trajectory generators.

Each runner returns a Trajectory holding x(0..T) as n x m arrays, row i being
node i's state. Runs are sequential; independent runs own their generators
and can be executed concurrently.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import scipy.linalg

from .lae import ConvexSet, LinearEquation, project_rows, project_rows_onto_set, solve_exact
from .netcore import Graph, WeightMatrix, as_weight_matrix, metropolis_weights, spectral_stats
from .ppsc import Mechanism, check_graph_compliance
from .randomness import derive_seed, sample_laplace, substream

logger = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1e12


class ProtocolError(ValueError):
    """Raised on invalid protocol inputs."""


@dataclass
class Trajectory:
    """Node-state sequence x(0..T) with run metadata."""

    n: int
    m: int
    states: list[np.ndarray] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)
    extras: dict[str, list[np.ndarray]] = field(default_factory=dict)

    def append(self, state: np.ndarray) -> None:
        arr = np.array(state, dtype=float)
        if arr.shape != (self.n, self.m):
            raise ProtocolError(f"State of shape {arr.shape} does not match {(self.n, self.m)}")
        if not np.all(np.isfinite(arr)):
            raise ProtocolError("Non-finite state rejected")
        arr.setflags(write=False)
        self.states.append(arr)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def steps(self) -> int:
        return len(self.states) - 1

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def diverged(self) -> bool:
        return bool(self.meta.get("diverged", False))

    def array(self) -> np.ndarray:
        """States stacked as a (T+1, n, m) array."""
        return np.stack(self.states)

    def node(self, i: int) -> np.ndarray:
        """Node i's states as a (T+1, m) array."""
        return np.stack([s[i] for s in self.states])

    def averages(self) -> np.ndarray:
        return self.array().mean(axis=1)

    def flat(self, t: int) -> np.ndarray:
        """x(t) stacked node by node into an nm-vector."""
        return self.states[t].reshape(-1)


@dataclass
class DpParams:
    """Noise and step schedules of the differentially private solver."""

    c: float
    phi: float
    lam: float
    psi: float
    omega: ConvexSet

    def __post_init__(self) -> None:
        if not self.c > 0:
            raise ProtocolError(f"Noise scale c must be positive, got {self.c}")
        if not 0 < self.phi < 1:
            raise ProtocolError(f"Noise decay phi must lie in (0, 1), got {self.phi}")
        if not self.lam > 0:
            raise ProtocolError(f"Step base lambda must be positive, got {self.lam}")
        if not 0 < self.psi < 1:
            raise ProtocolError(f"Step decay psi must lie in (0, 1), got {self.psi}")

    def noise_scale(self, t: int) -> float:
        return self.c * self.phi**t

    def step(self, t: int) -> float:
        return self.lam * self.psi**t

    def to_dict(self) -> dict:
        return {"c": self.c, "phi": self.phi, "lambda": self.lam, "psi": self.psi}


@dataclass
class QuadraticObjectiveSet:
    """Local objectives f_i(x) = 0.5 * ||A_i x - b_i||^2."""

    A: list[np.ndarray]
    b: list[np.ndarray]

    def __post_init__(self) -> None:
        if len(self.A) != len(self.b) or not self.A:
            raise ProtocolError("Objectives need one (A_i, b_i) pair per node")
        self.A = [np.atleast_2d(np.asarray(a, dtype=float)) for a in self.A]
        self.b = [np.asarray(v, dtype=float).reshape(-1) for v in self.b]
        m = self.A[0].shape[1]
        for i, (a, v) in enumerate(zip(self.A, self.b)):
            if a.shape[1] != m or a.shape[0] != v.shape[0]:
                raise ProtocolError(f"Objective {i}: A of shape {a.shape} and b of length {v.shape[0]}")

    @property
    def n(self) -> int:
        return len(self.A)

    @property
    def m(self) -> int:
        return self.A[0].shape[1]

    def value(self, i: int, x: np.ndarray) -> float:
        r = self.A[i] @ x - self.b[i]
        return 0.5 * float(r @ r)

    def gradient(self, i: int, x: np.ndarray) -> np.ndarray:
        return self.A[i].T @ (self.A[i] @ x - self.b[i])

    def gradients(self, X: np.ndarray) -> np.ndarray:
        return np.vstack([self.gradient(i, X[i]) for i in range(self.n)])

    def minimizer(self) -> np.ndarray:
        """Joint minimizer of sum f_i from the normal equations."""
        gram = sum(a.T @ a for a in self.A)
        rhs = sum(a.T @ v for a, v in zip(self.A, self.b))
        return np.linalg.lstsq(gram, rhs, rcond=None)[0]

    @classmethod
    def from_dict(cls, data: list[dict]) -> QuadraticObjectiveSet:
        return cls([d["A"] for d in data], [d["b"] for d in data])


@dataclass(frozen=True, eq=False)
class ClosedLoopSystem:
    """x(t+1) = F x(t) + alpha * z_H with F = W (x) I_m - alpha * Z_H."""

    F: np.ndarray
    z_H: np.ndarray
    alpha: float
    Z_H: np.ndarray
    n: int
    m: int

    def step(self, x: np.ndarray) -> np.ndarray:
        return self.F @ x + self.alpha * self.z_H

    def simulate(self, x0: np.ndarray, steps: int) -> Trajectory:
        traj = Trajectory(self.n, self.m, meta={"protocol": "closed_loop", "alpha": self.alpha})
        x = np.asarray(x0, dtype=float).reshape(-1)
        traj.append(x.reshape(self.n, self.m))
        for _ in range(steps):
            x = self.step(x)
            traj.append(x.reshape(self.n, self.m))
        return traj

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.F))))


def _as_states(x0: np.ndarray, n: int, m: int | None = None) -> np.ndarray:
    X = np.array(x0, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[0] != n or (m is not None and X.shape[1] != m):
        raise ProtocolError(f"Initial state of shape {X.shape} does not match n={n}, m={m}")
    return X


def _check_weights(W: WeightMatrix | np.ndarray, n: int) -> np.ndarray:
    w = as_weight_matrix(W).matrix
    if w.shape[0] != n:
        raise ProtocolError(f"Weight matrix of size {w.shape[0]} does not match n={n}")
    return w


def _start(n: int, m: int, X: np.ndarray, **meta: Any) -> Trajectory:
    traj = Trajectory(n, m, meta={"diverged": False, **meta})
    traj.append(X)
    return traj


def _advance(traj: Trajectory, X: np.ndarray, threshold: float) -> bool:
    """Append X unless it diverged; returns False when the run must stop."""
    if not np.all(np.isfinite(X)) or np.max(np.abs(X)) > threshold:
        logger.warning(
            "%s diverged at step %d", traj.meta.get("protocol", "run"), traj.steps + 1
        )
        traj.meta["diverged"] = True
        return False
    traj.append(X)
    return True


def step_size(t: int) -> float:
    """Diminishing gradient step 1/sqrt(t+1)."""
    return 1.0 / np.sqrt(t + 1.0)


def run_average_consensus(
    W: WeightMatrix | np.ndarray, beta: np.ndarray, steps: int
) -> Trajectory:
    X = _as_states(beta, as_weight_matrix(W).n)
    w = _check_weights(W, X.shape[0])
    traj = _start(X.shape[0], X.shape[1], X, protocol="consensus", steps=steps)
    for _ in range(steps):
        X = w @ X
        if not _advance(traj, X, DIVERGENCE_THRESHOLD):
            break
    return traj


def run_cpa(
    W: WeightMatrix | np.ndarray,
    E: LinearEquation,
    alpha: float,
    x0: np.ndarray,
    steps: int,
    divergence_threshold: float = DIVERGENCE_THRESHOLD,
) -> Trajectory:
    """Consensus plus a local projection correction of step alpha."""
    if not alpha > 0:
        raise ProtocolError(f"Step size alpha must be positive, got {alpha}")
    w = _check_weights(W, E.n)
    X = _as_states(x0, E.n, E.m)
    traj = _start(E.n, E.m, X, protocol="cpa", alpha=alpha, steps=steps)
    for _ in range(steps):
        X = w @ X + alpha * (project_rows(E, X) - X)
        if not _advance(traj, X, divergence_threshold):
            break
    return traj


def run_pca(
    W: WeightMatrix | np.ndarray,
    E: LinearEquation,
    x0: np.ndarray,
    steps: int,
    divergence_threshold: float = DIVERGENCE_THRESHOLD,
) -> Trajectory:
    """Projection consensus: every node averages its neighbors' projected states."""
    w = _check_weights(W, E.n)
    X = _as_states(x0, E.n, E.m)
    traj = _start(E.n, E.m, X, protocol="pca", steps=steps)
    for _ in range(steps):
        X = w @ project_rows(E, X)
        if not _advance(traj, X, divergence_threshold):
            break
    return traj


def run_dgd(
    W: WeightMatrix | np.ndarray,
    objectives: QuadraticObjectiveSet,
    x0: np.ndarray,
    steps: int,
    divergence_threshold: float = DIVERGENCE_THRESHOLD,
) -> Trajectory:
    w = _check_weights(W, objectives.n)
    X = _as_states(x0, objectives.n, objectives.m)
    traj = _start(objectives.n, objectives.m, X, protocol="dgd", steps=steps)
    for t in range(steps):
        X = w @ X - step_size(t) * objectives.gradients(X)
        if not _advance(traj, X, divergence_threshold):
            break
    return traj


def dp_noise(seed: int, n: int, m: int, t: int, scale: float) -> np.ndarray:
    """Laplace noise for every node at step t, one substream per (node, t)."""
    return np.vstack([sample_laplace(substream(seed, i, t), scale, m) for i in range(n)])


def run_dp_dles(
    W: WeightMatrix | np.ndarray,
    E: LinearEquation,
    dp: DpParams,
    x0: np.ndarray,
    steps: int,
    seed: int,
    exclude_self: bool = False,
    divergence_threshold: float = DIVERGENCE_THRESHOLD,
) -> Trajectory:
    """Differentially private solver: clip to Omega, broadcast a noisy copy, correct locally.

    Args:
        W: Symmetric weight matrix; full rank is needed only for the
            privacy certificate.
        E: Local equations.
        dp: Noise and step schedules.
        x0: Initial states, n x m.
        steps: Number of iterations.
        seed: Base seed; noise for (node, t) comes from its own substream.
        exclude_self: Mix only neighbors' noisy states, leaving out w_ii.

    Returns:
        The trajectory; meta records whether W had full rank.
    """
    wm = as_weight_matrix(W)
    w = _check_weights(wm, E.n)
    X = _as_states(x0, E.n, E.m)
    full_rank = spectral_stats(wm).full_rank
    if not full_rank:
        logger.warning("Weight matrix is rank deficient; the privacy certificate does not apply")
    mix = w - np.diag(np.diag(w)) if exclude_self else w

    traj = _start(
        E.n, E.m, X,
        protocol="dp_dles", seed=seed, full_rank=full_rank,
        exclude_self=exclude_self, steps=steps, **dp.to_dict(),
    )
    for t in range(steps):
        flat = project_rows_onto_set(dp.omega, X)
        noisy = flat + dp_noise(seed, E.n, E.m, t, dp.noise_scale(t))
        X = mix @ noisy + dp.step(t) * (project_rows(E, flat) - flat)
        if not _advance(traj, X, divergence_threshold):
            break
    return traj


def _check_mechanism(g: Graph, mech: Mechanism, n: int) -> None:
    if g.n != n:
        raise ProtocolError(f"Graph has {g.n} nodes but the data has {n} rows")
    mg = getattr(mech, "graph", None)
    if mg is not None and (mg.n != g.n or mg.edges != g.edges):
        raise ProtocolError("Mechanism was built for a different graph")


def _mechanism_round(
    mech: Mechanism, g: Graph, values: np.ndarray, seed: int, t: int, traj: Trajectory
) -> np.ndarray:
    result = mech.apply(values, derive_seed(seed, t), round=t)
    traj.meta["messages"] = traj.meta.get("messages", 0) + len(result.log)
    if not check_graph_compliance(result.log, g):
        traj.meta["graph_compliant"] = False
    return result.beta_sharp


def run_ppsc_consensus(
    g: Graph,
    mech: Mechanism,
    beta: np.ndarray,
    rounds: int,
    seed: int,
    divergence_threshold: float = DIVERGENCE_THRESHOLD,
) -> Trajectory:
    """Average consensus behind a privacy-preserving summation mechanism."""
    X = _as_states(beta, g.n)
    _check_mechanism(g, mech, X.shape[0])
    traj = _start(g.n, X.shape[1], X, protocol="ppsc_consensus", seed=seed, graph_compliant=True)
    traj.extras["consensus"] = []
    for t in range(rounds):
        avg = _mechanism_round(mech, g, X, seed, t, traj).mean(axis=0)
        traj.extras["consensus"].append(avg)
        X = np.tile(avg, (g.n, 1))
        if not _advance(traj, X, divergence_threshold):
            break
    return traj


def run_ppsc_les(
    g: Graph,
    E: LinearEquation,
    mech: Mechanism,
    y0: np.ndarray,
    rounds: int,
    seed: int,
    inner_steps: int | None = None,
    weights: WeightMatrix | np.ndarray | None = None,
    divergence_threshold: float = DIVERGENCE_THRESHOLD,
) -> Trajectory:
    """Privacy-preserving linear-equation solver: y_i(t+1) = P_i(average of masked states).

    With inner_steps set, the exact average is replaced by inner_steps rounds
    of consensus with the given (or Metropolis) weights and each node projects
    its own approximation.
    """
    Y = _as_states(y0, E.n, E.m)
    _check_mechanism(g, mech, E.n)
    solvable = solve_exact(E) is not None
    if not solvable:
        logger.warning("Equation is unsolvable; running the privacy-preserving solver anyway")
    w = None
    if inner_steps:
        w = _check_weights(weights if weights is not None else metropolis_weights(g), g.n)

    traj = _start(
        E.n, E.m, Y,
        protocol="ppsc_les", seed=seed, solvable=solvable,
        inner_steps=inner_steps, graph_compliant=True,
    )
    traj.extras["consensus"] = []
    for t in range(rounds):
        masked = _mechanism_round(mech, g, Y, seed, t, traj)
        avg = masked.mean(axis=0)
        traj.extras["consensus"].append(avg)
        if w is None:
            local = np.tile(avg, (E.n, 1))
        else:
            local = np.linalg.matrix_power(w, inner_steps) @ masked
        Y = project_rows(E, local)
        if not _advance(traj, Y, divergence_threshold):
            break
    return traj


def run_ppsc_dgd(
    g: Graph,
    objectives: QuadraticObjectiveSet,
    mech: Mechanism,
    y0: np.ndarray,
    rounds: int,
    seed: int,
    divergence_threshold: float = DIVERGENCE_THRESHOLD,
) -> Trajectory:
    """Privacy-preserving distributed gradient descent with step 1/sqrt(t+1)."""
    Y = _as_states(y0, objectives.n, objectives.m)
    _check_mechanism(g, mech, objectives.n)
    traj = _start(objectives.n, objectives.m, Y, protocol="ppsc_dgd", seed=seed, graph_compliant=True)
    traj.extras["consensus"] = []
    for t in range(rounds):
        descended = Y - step_size(t) * objectives.gradients(Y)
        avg = _mechanism_round(mech, g, descended, seed, t, traj).mean(axis=0)
        traj.extras["consensus"].append(avg)
        Y = np.tile(avg, (objectives.n, 1))
        if not _advance(traj, Y, divergence_threshold):
            break
    return traj


def closed_loop(
    W: WeightMatrix | np.ndarray, E: LinearEquation, alpha: float, verify: bool = True
) -> ClosedLoopSystem:
    """Affine closed-loop form of CPA.

    With verify set, the affine recursion is checked against run_cpa on a
    fixed random start for 10 steps.
    """
    w = _check_weights(W, E.n)
    hh = np.einsum("ij,ij->i", E.H, E.H)
    Z_H = scipy.linalg.block_diag(*[np.outer(h, h) / s for h, s in zip(E.H, hh)])
    z_H = (E.H * (E.z / hh)[:, None]).reshape(-1)
    F = np.kron(w, np.eye(E.m)) - alpha * Z_H
    system = ClosedLoopSystem(F=F, z_H=z_H, alpha=alpha, Z_H=Z_H, n=E.n, m=E.m)

    if verify and alpha > 0:
        x0 = substream(0, E.n, E.m).uniform(-1.0, 1.0, (E.n, E.m))
        affine = system.simulate(x0, 10).array()
        recursion = run_cpa(w, E, alpha, x0, 10).array()
        gap = float(np.max(np.abs(affine - recursion)))
        if gap > 1e-10 * (1.0 + float(np.max(np.abs(recursion)))):
            raise ProtocolError(f"Closed-loop form disagrees with the recursion by {gap:.3e}")
    return system


def gradient_check(
    objectives: QuadraticObjectiveSet, probes: int = 20, seed: int = 0, h: float = 1e-6
) -> float:
    """Largest gap between analytic gradients and central differences."""
    rng = substream(seed)
    worst = 0.0
    eye = np.eye(objectives.m)
    for i in range(objectives.n):
        for _ in range(probes):
            x = rng.standard_normal(objectives.m)
            numeric = np.array([
                (objectives.value(i, x + h * e) - objectives.value(i, x - h * e)) / (2 * h)
                for e in eye
            ])
            worst = max(worst, float(np.max(np.abs(numeric - objectives.gradient(i, x)))))
    return worst


def write_trajectory_csv(traj: Trajectory, path: Path) -> None:
    """Write columns t, node, x_1..x_m plus a JSON metadata sidecar."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t", "node", *(f"x_{k + 1}" for k in range(traj.m))])
        for t, state in enumerate(traj.states):
            for i, row in enumerate(state):
                writer.writerow([t, i, *(repr(float(v)) for v in row)])
    with open(metadata_path(path), "w", encoding="utf-8") as f:
        json.dump(_jsonable(traj.meta), f, indent=2, sort_keys=True)


def read_trajectory_csv(path: Path) -> Trajectory:
    rows: dict[int, dict[int, list[float]]] = {}
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        m = len(header) - 2
        for record in reader:
            t, i = int(record[0]), int(record[1])
            rows.setdefault(t, {})[i] = [float(v) for v in record[2:]]
    if not rows:
        raise ProtocolError(f"No states in {path}")
    n = len(rows[0])
    meta: dict[str, Any] = {}
    sidecar = metadata_path(path)
    if sidecar.exists():
        with open(sidecar, encoding="utf-8") as f:
            meta = json.load(f)
    traj = Trajectory(n, m, meta=meta)
    for t in sorted(rows):
        traj.append(np.array([rows[t][i] for i in range(n)]))
    return traj


def metadata_path(path: Path) -> Path:
    return path.with_name(path.stem + ".meta.json")


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value
