"""Linear-equation datasets, row projections and equivalence classes.

An equation E: H y = z is distributed row-wise, node i holding (H_i, z_i).
Recovery of a dataset is only ever possible up to per-row nonzero scaling,
so comparisons go through a canonical representative of each class.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

logger = logging.getLogger(__name__)

ZERO_ROW_TOL = 1e-12
SIGN_TOL = 1e-12
MAX_BOX_DIM = 20


class EquationError(ValueError):
    """Raised on malformed equations, dimension mismatches or invalid sets."""


@dataclass(frozen=True, eq=False)
class LinearEquation:
    """The network dataset (H, z); row i belongs to node i."""

    H: np.ndarray
    z: np.ndarray

    def __post_init__(self) -> None:
        h = np.array(self.H, dtype=float)
        z = np.array(self.z, dtype=float).reshape(-1)
        if h.ndim == 1:
            h = h.reshape(1, -1)
        if h.ndim != 2 or h.shape[0] != z.shape[0]:
            raise EquationError(f"H of shape {h.shape} does not match z of length {z.shape[0]}")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(z))):
            raise EquationError("Equation contains non-finite entries")
        norms = np.linalg.norm(h, axis=1)
        zero_rows = np.flatnonzero(norms <= ZERO_ROW_TOL)
        if zero_rows.size:
            raise EquationError(f"Zero row(s) in H: {zero_rows.tolist()}")
        h.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "H", h)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m(self) -> int:
        return self.H.shape[1]

    def row(self, i: int) -> tuple[np.ndarray, float]:
        return self.H[i], float(self.z[i])

    def scaled(self, factors: np.ndarray) -> LinearEquation:
        """Per-row rescaling, which stays in the same equivalence class."""
        f = np.asarray(factors, dtype=float).reshape(-1)
        return LinearEquation(self.H * f[:, None], self.z * f)

    def to_dict(self) -> dict:
        return {"H": self.H.tolist(), "z": self.z.tolist()}


@dataclass(frozen=True, eq=False)
class CanonicalEquation:
    """Unit rows with a positive leading component; failed rows may be NaN."""

    H_c: np.ndarray
    z_c: np.ndarray

    @property
    def n(self) -> int:
        return self.H_c.shape[0]

    @property
    def m(self) -> int:
        return self.H_c.shape[1]

    def rows(self) -> list[dict]:
        return [
            {"node": i, "h": self.H_c[i].tolist(), "z": float(self.z_c[i])}
            for i in range(self.n)
        ]


@dataclass(frozen=True)
class AdjacencyResult:
    index: int
    delta_A: float
    delta_b: float


@dataclass(frozen=True)
class ExactSolution:
    solution: np.ndarray
    unique: bool
    residual: float


@dataclass(frozen=True, eq=False)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        c = np.array(self.center, dtype=float).reshape(-1)
        if not self.radius > 0:
            raise EquationError(f"Ball radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", c)

    @property
    def dim(self) -> int:
        return self.center.shape[0]


@dataclass(frozen=True, eq=False)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lo = np.array(self.lower, dtype=float).reshape(-1)
        hi = np.array(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise EquationError("Box bounds have different dimensions")
        if np.any(lo > hi):
            raise EquationError("Box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


ConvexSet = Union[Ball, Box]


def _check_row(h: np.ndarray) -> float:
    hh = float(h @ h)
    if np.sqrt(hh) <= ZERO_ROW_TOL:
        raise EquationError("Zero row cannot define a hyperplane")
    return hh


def row_projection(h: np.ndarray, z: float, x: np.ndarray) -> np.ndarray:
    """Euclidean projection of x onto the hyperplane {y : h·y = z}."""
    h = np.asarray(h, dtype=float)
    x = np.asarray(x, dtype=float)
    hh = _check_row(h)
    return x - h * ((h @ x - z) / hh)


def project_rows(E: LinearEquation, X: np.ndarray) -> np.ndarray:
    """Row-wise projection: row i of the result is P_i(X[i])."""
    X = np.asarray(X, dtype=float)
    if X.shape != (E.n, E.m):
        raise EquationError(f"State of shape {X.shape} does not match equation {(E.n, E.m)}")
    hh = np.einsum("ij,ij->i", E.H, E.H)
    gap = np.einsum("ij,ij->i", E.H, X) - E.z
    return X - E.H * (gap / hh)[:, None]


def projection_points(E: LinearEquation, y: np.ndarray) -> np.ndarray:
    """Projections P_i(y) of one common point onto every hyperplane."""
    y = np.asarray(y, dtype=float).reshape(-1)
    return project_rows(E, np.tile(y, (E.n, 1)))


def _canonical_rows(H: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(H, axis=1)
    Hc = H / norms[:, None]
    zc = z / norms
    for i in range(Hc.shape[0]):
        lead = np.flatnonzero(np.abs(Hc[i]) > SIGN_TOL)
        if lead.size and Hc[i, lead[0]] < 0:
            Hc[i] = -Hc[i]
            zc[i] = -zc[i]
    return Hc, zc


def canonical_row(h: np.ndarray, z: float) -> tuple[np.ndarray, float]:
    h = np.asarray(h, dtype=float).reshape(1, -1)
    _check_row(h[0])
    Hc, zc = _canonical_rows(h, np.array([float(z)]))
    return Hc[0], float(zc[0])


def canonical_form(E: LinearEquation) -> CanonicalEquation:
    """Canonical representative: unit rows, first significant component positive."""
    Hc, zc = _canonical_rows(E.H.copy(), E.z.copy())
    return CanonicalEquation(Hc, zc)


def _require_same_shape(E: LinearEquation, E2: LinearEquation) -> None:
    if (E.n, E.m) != (E2.n, E2.m):
        raise EquationError(f"Dimension mismatch: {(E.n, E.m)} vs {(E2.n, E2.m)}")


def canonical_distance(a: CanonicalEquation, b: CanonicalEquation) -> float:
    """Largest entrywise gap between two canonical forms (inf when a row failed)."""
    if a.H_c.shape != b.H_c.shape:
        raise EquationError(f"Dimension mismatch: {a.H_c.shape} vs {b.H_c.shape}")
    gap = max(np.max(np.abs(a.H_c - b.H_c)), np.max(np.abs(a.z_c - b.z_c)))
    return float(gap) if np.isfinite(gap) else float("inf")


def equations_equivalent(E: LinearEquation, E2: LinearEquation, tol: float = 1e-9) -> bool:
    _require_same_shape(E, E2)
    return canonical_distance(canonical_form(E), canonical_form(E2)) <= tol


def _projector(h: np.ndarray) -> np.ndarray:
    return np.outer(h, h) / float(h @ h)


def adjacency_distance(
    E: LinearEquation, E2: LinearEquation, tol: float = 1e-9
) -> AdjacencyResult | None:
    """(delta_A, delta_b) for datasets differing in at most one row.

    Returns:
        The differing row index with its projector and offset distances,
        index -1 with zero distances for equivalent datasets, or None when
        two or more rows differ.
    """
    _require_same_shape(E, E2)
    a, b = canonical_form(E), canonical_form(E2)
    differing = [
        i
        for i in range(E.n)
        if max(np.max(np.abs(a.H_c[i] - b.H_c[i])), abs(a.z_c[i] - b.z_c[i])) > tol
    ]
    if not differing:
        return AdjacencyResult(index=-1, delta_A=0.0, delta_b=0.0)
    if len(differing) > 1:
        return None

    i = differing[0]
    h, z = E.row(i)
    h2, z2 = E2.row(i)
    delta_A = np.linalg.norm(_projector(h) - _projector(h2), 2)
    delta_b = np.linalg.norm(z * h / (h @ h) - z2 * h2 / (h2 @ h2))
    return AdjacencyResult(index=i, delta_A=float(delta_A), delta_b=float(delta_b))


def solve_exact(E: LinearEquation) -> ExactSolution | None:
    """Minimum-norm least-squares solution, or None when E is unsolvable."""
    y, _, rank, _ = np.linalg.lstsq(E.H, E.z, rcond=None)
    residual = float(np.linalg.norm(E.H @ y - E.z))
    if residual > 1e-8 * (1.0 + np.linalg.norm(E.z)):
        logger.debug("Equation unsolvable, residual %.3e", residual)
        return None
    return ExactSolution(solution=y, unique=int(rank) == E.m, residual=residual)


def project_onto_set(S: ConvexSet, x: np.ndarray) -> np.ndarray:
    """The closest point of S to x."""
    x = np.asarray(x, dtype=float)
    if isinstance(S, Ball):
        offset = x - S.center
        dist = np.linalg.norm(offset)
        if dist <= S.radius:
            return x.copy()
        return S.center + S.radius * offset / dist
    return np.clip(x, S.lower, S.upper)


def project_rows_onto_set(S: ConvexSet, X: np.ndarray) -> np.ndarray:
    return np.vstack([project_onto_set(S, row) for row in np.asarray(X, dtype=float)])


def sup_norm_bound(S: ConvexSet) -> float:
    """B = sup over S of the Euclidean norm."""
    if isinstance(S, Ball):
        return float(np.linalg.norm(S.center) + S.radius)
    if S.dim > MAX_BOX_DIM:
        raise EquationError(f"Box dimension {S.dim} exceeds the corner enumeration guard {MAX_BOX_DIM}")
    best = 0.0
    for corner in itertools.product(*zip(S.lower, S.upper)):
        best = max(best, float(np.linalg.norm(corner)))
    return best


def convex_set_from_dict(data: dict) -> ConvexSet:
    kind = data.get("kind", "ball")
    if kind == "ball":
        return Ball(np.asarray(data["center"], dtype=float), float(data["radius"]))
    if kind == "box":
        return Box(np.asarray(data["lower"], dtype=float), np.asarray(data["upper"], dtype=float))
    raise EquationError(f"Unknown convex set kind: {kind!r}")
