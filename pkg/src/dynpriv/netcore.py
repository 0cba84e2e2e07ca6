"""Graphs, doubly stochastic weight matrices and their spectra."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

import networkx as nx
import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-9


class GraphError(ValueError):
    """Raised when a graph or weight matrix is malformed."""


@dataclass(frozen=True)
class Graph:
    """Undirected graph on nodes 0..n-1."""

    n: int
    edges: frozenset[tuple[int, int]]
    connected: bool
    _nx: nx.Graph = field(repr=False, compare=False, hash=False)

    def neighbors(self, i: int) -> list[int]:
        """Sorted neighbor list N_i (excluding i itself)."""
        return sorted(self._nx.neighbors(i))

    def degree(self, i: int) -> int:
        return self._nx.degree(i)

    def has_edge(self, i: int, j: int) -> bool:
        return self._nx.has_edge(i, j)

    def to_dict(self) -> dict:
        return {"n": self.n, "edges": [list(e) for e in sorted(self.edges)]}


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Consensus weight matrix W; the array is read-only."""

    matrix: np.ndarray
    tolerance: float = DEFAULT_TOLERANCE

    def __post_init__(self) -> None:
        arr = np.array(self.matrix, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise GraphError(f"Weight matrix must be square, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise GraphError("Weight matrix contains non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "matrix", arr)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def is_symmetric(self) -> bool:
        return bool(np.allclose(self.matrix, self.matrix.T, rtol=0.0, atol=self.tolerance))


@dataclass(frozen=True)
class SpectralStats:
    lambda_min: float
    sigma_min: float
    sigma_max: float
    full_rank: bool
    eigenvalues: tuple[float, ...] = ()


@dataclass
class ValidationReport:
    """Violated weight-matrix invariants; empty means valid."""

    violations: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations


def build_graph(n: int, edges: Iterable[Iterable[int]]) -> Graph:
    """Build an undirected graph from an edge list.

    Edges are normalized to (min, max) and deduplicated; their order is
    irrelevant.

    Args:
        n: Node count, at least 2.
        edges: Pairs of 0-based node indices.

    Returns:
        The graph with its connectivity flag computed.

    Raises:
        GraphError: On n < 2, out-of-range indices or self-loops.
    """
    if n < 2:
        raise GraphError(f"Graph needs at least 2 nodes, got {n}")

    normalized: set[tuple[int, int]] = set()
    for pair in edges:
        i, j = (int(v) for v in pair)
        if not (0 <= i < n and 0 <= j < n):
            raise GraphError(f"Edge ({i}, {j}) out of range for n={n}")
        if i == j:
            raise GraphError(f"Self-loop at node {i}")
        normalized.add((min(i, j), max(i, j)))

    g = nx.Graph()
    g.add_nodes_from(range(n))
    g.add_edges_from(normalized)
    connected = nx.is_connected(g)
    if not connected:
        logger.debug("Graph with %d nodes and %d edges is disconnected", n, len(normalized))
    return Graph(n=n, edges=frozenset(normalized), connected=connected, _nx=g)


def metropolis_weights(g: Graph) -> WeightMatrix:
    """Metropolis weights w_ij = 1/(1+max(deg_i, deg_j)) with the diagonal absorbing the slack."""
    if not g.connected:
        raise GraphError("Metropolis weights require a connected graph")

    w = np.zeros((g.n, g.n))
    for i, j in g.edges:
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(g.degree(i), g.degree(j)))
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    return WeightMatrix(w)


def validate_weight_matrix(
    w: WeightMatrix | np.ndarray, g: Graph, tol: float = DEFAULT_TOLERANCE
) -> ValidationReport:
    """Check double stochasticity, graph compliance and positive diagonal.

    Violations are reported, never raised.
    """
    arr = w.matrix if isinstance(w, WeightMatrix) else np.asarray(w, dtype=float)
    report = ValidationReport()
    if arr.shape != (g.n, g.n):
        report.violations.append(f"shape {arr.shape} does not match n={g.n}")
        return report

    for i, s in enumerate(arr.sum(axis=1)):
        if abs(s - 1.0) > tol:
            report.violations.append(f"row {i} sums to {s!r}")
    for j, s in enumerate(arr.sum(axis=0)):
        if abs(s - 1.0) > tol:
            report.violations.append(f"column {j} sums to {s!r}")

    for i in range(g.n):
        if arr[i, i] <= 0.0:
            report.violations.append(f"diagonal entry w[{i},{i}] = {arr[i, i]!r} is not positive")
        for j in range(g.n):
            if i == j:
                continue
            if g.has_edge(i, j):
                if arr[i, j] <= 0.0:
                    report.violations.append(f"edge ({i}, {j}) has non-positive weight {arr[i, j]!r}")
            elif abs(arr[i, j]) > tol:
                report.violations.append(f"non-edge ({i}, {j}) has weight {arr[i, j]!r}")
    return report


def as_weight_matrix(w: WeightMatrix | np.ndarray | list) -> WeightMatrix:
    if isinstance(w, WeightMatrix):
        return w
    return WeightMatrix(np.asarray(w, dtype=float))


def spectral_stats(w: WeightMatrix | np.ndarray) -> SpectralStats:
    """Eigenvalue statistics of a symmetric W.

    Raises:
        GraphError: If W is not symmetric.
    """
    w = as_weight_matrix(w)
    if not w.is_symmetric():
        raise GraphError("Spectral statistics are restricted to symmetric weight matrices")

    eig = np.linalg.eigvalsh(w.matrix)
    mags = np.abs(eig)
    sigma_min = float(mags.min())
    return SpectralStats(
        lambda_min=float(eig.min()),
        sigma_min=sigma_min,
        sigma_max=float(mags.max()),
        full_rank=sigma_min > w.tolerance,
        eigenvalues=tuple(float(v) for v in eig),
    )


def weights_for_graph(
    g: Graph, explicit: np.ndarray | list | None = None, tol: float = DEFAULT_TOLERANCE
) -> WeightMatrix:
    """Explicit weights validated against g, or Metropolis weights when none are given."""
    if explicit is None:
        return metropolis_weights(g)
    w = WeightMatrix(np.asarray(explicit, dtype=float), tolerance=tol)
    report = validate_weight_matrix(w, g, tol)
    if not report.valid:
        raise GraphError("Invalid weight matrix: " + "; ".join(report.violations))
    return w
