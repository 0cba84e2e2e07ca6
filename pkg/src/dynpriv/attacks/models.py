"""Data models for the eavesdropper attacks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..lae import CanonicalEquation, LinearEquation
from ..netcore import Graph


class AttackError(ValueError):
    """Raised when attack inputs are unusable."""


class IdentificationError(RuntimeError):
    """Raised when system identification cannot produce a realization."""


@dataclass(frozen=True, eq=False)
class ObservationModel:
    """What a local eavesdropper at one node sees.

    The neighborhood is closed: it lists the observer together with its
    neighbors, in increasing order.
    """

    observer: int
    neighborhood: tuple[int, ...]
    n: int
    known_solution: np.ndarray | None = None

    def __post_init__(self) -> None:
        nbhd = tuple(sorted(set(int(j) for j in self.neighborhood)))
        if not nbhd:
            raise AttackError("Observation neighborhood is empty")
        if nbhd[0] < 0 or nbhd[-1] >= self.n or not 0 <= self.observer < self.n:
            raise AttackError(f"Observation indices out of range for n={self.n}")
        object.__setattr__(self, "neighborhood", nbhd)
        if self.known_solution is not None:
            object.__setattr__(
                self, "known_solution", np.asarray(self.known_solution, dtype=float).reshape(-1)
            )

    @classmethod
    def at_node(
        cls, graph: Graph, observer: int, known_solution: np.ndarray | None = None
    ) -> ObservationModel:
        return cls(observer, (observer, *graph.neighbors(observer)), graph.n, known_solution)

    @classmethod
    def full(cls, n: int, known_solution: np.ndarray | None = None) -> ObservationModel:
        return cls(0, tuple(range(n)), n, known_solution)

    def with_solution(self, y: np.ndarray) -> ObservationModel:
        return ObservationModel(self.observer, self.neighborhood, self.n, y)

    @property
    def selection(self) -> np.ndarray:
        """Row selector E_i with one 1 per row at column j_k."""
        sel = np.zeros((len(self.neighborhood), self.n))
        sel[np.arange(len(self.neighborhood)), list(self.neighborhood)] = 1.0
        return sel

    def output_matrix(self, m: int) -> np.ndarray:
        return np.kron(self.selection, np.eye(m))

    def state_rows(self, m: int) -> np.ndarray:
        """Indices of the stacked state observed through output_matrix(m)."""
        return np.concatenate([np.arange(j * m, (j + 1) * m) for j in self.neighborhood])

    def injection_matrix(self, m: int) -> np.ndarray:
        """B = e_observer (x) I_m."""
        e = np.zeros((self.n, 1))
        e[self.observer] = 1.0
        return np.kron(e, np.eye(m))

    def outputs(self, states: np.ndarray) -> np.ndarray:
        """y(t) = observed states minus 1 (x) y*, one row per time step.

        Args:
            states: (T+1, n, m) array of network states.
        """
        if self.known_solution is None:
            raise IdentificationError("The eavesdropper does not know a solution y*")
        observed = states[:, list(self.neighborhood), :]
        return (observed - self.known_solution[None, None, :]).reshape(states.shape[0], -1)


@dataclass(frozen=True, eq=False)
class Realization:
    """Identified pair (F*, C*), similar to the closed loop (F, E_i (x) I_m)."""

    F_star: np.ndarray
    C_star: np.ndarray
    method: str = ""

    @property
    def A_star(self) -> np.ndarray:
        return self.F_star

    @property
    def order(self) -> int:
        return self.F_star.shape[0]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.F_star)


@dataclass(frozen=True, eq=False)
class ProbeSignal:
    """Periodic probe; column c of samples[t] is the m-vector injected in campaign c."""

    period: int
    samples: np.ndarray
    R: np.ndarray
    condition_number: float

    @property
    def m(self) -> int:
        return self.samples.shape[1]

    def input(self, t: int, campaign: int) -> np.ndarray:
        return self.samples[t % self.period][:, campaign]


@dataclass
class NodeRecoverability:
    node: int
    condition_a_time: int | None
    condition_b_rank: int
    recoverable: bool


@dataclass
class RecoveredEquation:
    equation: CanonicalEquation
    per_node_method: list[str]
    residual: float
    node_residuals: list[float] = field(default_factory=list)

    @property
    def failed_nodes(self) -> list[int]:
        return [i for i, method in enumerate(self.per_node_method) if method == "failed"]

    @property
    def complete(self) -> bool:
        return not self.failed_nodes

    def as_linear_equation(self) -> LinearEquation:
        if not self.complete:
            raise AttackError(f"Rows {self.failed_nodes} were not recovered")
        return LinearEquation(self.equation.H_c, self.equation.z_c)

    def to_dict(self) -> dict:
        return {
            "per_node_method": self.per_node_method,
            "residual": self.residual,
            "node_residuals": self.node_residuals,
            "rows": self.equation.rows(),
        }


@dataclass
class StabilityReport:
    rho: float
    stable: bool
    alpha_bound: float
    lemma_applies: bool


@dataclass(eq=False)
class VectorizedSystem:
    """Linear system in (vec T, vec Q) with its minimum-norm solution."""

    matrix: object
    rhs: np.ndarray
    solution: np.ndarray
    residual: float
    rank_deficiency: int
    order: int

    def residual_of(self, T: np.ndarray, Q: np.ndarray) -> float:
        x = np.concatenate([np.asarray(T).reshape(-1, order="F"), np.asarray(Q).reshape(-1, order="F")])
        return float(np.linalg.norm(self.matrix @ x - self.rhs))

    def split(self) -> tuple[np.ndarray, np.ndarray]:
        """Minimum-norm (T, Q)."""
        k = self.order * self.order
        T = self.solution[:k].reshape(self.order, self.order, order="F")
        Q = self.solution[k:].reshape(self.order, self.order, order="F")
        return T, Q


@dataclass
class RecoveryOptions:
    max_iter: int = 200
    tol: float = 1e-8
    restarts: int = 1
    seed: int = 0
    perturbation: float = 0.05


@dataclass
class RecoveryStep:
    evaluation: int
    objective: float
    H: np.ndarray


@dataclass
class RecoveryResult:
    H_hat: CanonicalEquation
    objective: float
    converged: bool
    restarts_run: int = 1
    history: list[RecoveryStep] = field(default_factory=list)
