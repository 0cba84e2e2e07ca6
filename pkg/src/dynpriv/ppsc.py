"""Privacy-preserving summation consensus (PPSC) mechanisms and their property checks.

A mechanism maps local values beta to masked values beta_sharp whose sum is
unchanged. Three realizations are provided:

- ``edge_mask``: every edge {i, j} with i < j carries one Gaussian mask that
  node i adds and node j subtracts. Graph compliant and exactly sum
  consistent, but repeated invocations reveal beta through the sample mean.
- ``ideal``: the exact average plus zero-sum Gaussian noise. Its output law
  depends on beta only through the sum; centralized, used as an oracle.
- ``identity``: no masking.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Protocol

import numpy as np

from .netcore import Graph
from .randomness import derive_seed, substream

logger = logging.getLogger(__name__)

MechanismKind = Literal["edge_mask", "ideal", "identity"]


class MechanismError(ValueError):
    """Raised when a mechanism is misconfigured or misused."""


@dataclass(frozen=True)
class MessageRecord:
    """One transmitted payload; the payload values are kept out of reports."""

    sender: int
    receiver: int
    round: int
    dim: int
    payload: tuple[float, ...] = field(default=(), repr=False, compare=False)

    def to_dict(self) -> dict:
        return {"sender": self.sender, "receiver": self.receiver, "round": self.round, "dim": self.dim}


@dataclass
class MessageLog:
    records: list[MessageRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def add(self, sender: int, receiver: int, round: int, payload: np.ndarray) -> None:
        values = tuple(float(v) for v in np.ravel(payload))
        self.records.append(MessageRecord(sender, receiver, round, len(values), values))


@dataclass
class PpscResult:
    beta_sharp: np.ndarray
    log: MessageLog


class Mechanism(Protocol):
    """Anything that masks beta and reports the messages it sent."""

    def apply(self, beta: np.ndarray, seed: int, round: int = 0) -> PpscResult: ...


@dataclass(frozen=True)
class PpscMechanism:
    kind: MechanismKind
    sigma: float = 0.0
    graph: Graph | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("edge_mask", "ideal", "identity"):
            raise MechanismError(f"Unknown mechanism kind: {self.kind!r}")
        if self.kind == "edge_mask":
            if self.graph is None:
                raise MechanismError("edge_mask needs a graph")
            if not self.graph.connected:
                raise MechanismError("edge_mask needs a connected graph")
            if not self.sigma > 0:
                raise MechanismError(f"edge_mask needs sigma > 0, got {self.sigma}")
        elif self.kind == "ideal" and self.sigma < 0:
            raise MechanismError(f"ideal needs sigma >= 0, got {self.sigma}")

    def apply(self, beta: np.ndarray, seed: int, round: int = 0) -> PpscResult:
        return ppsc_apply(self, beta, seed, round)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma}


@dataclass
class SumConsistencyReport:
    trials: int
    max_rel_error: float

    @property
    def ok(self) -> bool:
        return self.max_rel_error <= 1e-9


@dataclass
class IdentifiabilityReport:
    samples: int
    mean_gap: list[float]
    standard_error: list[float]
    distinguishable: bool


def _as_values(beta: np.ndarray) -> np.ndarray:
    arr = np.array(beta, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if not np.all(np.isfinite(arr)):
        raise MechanismError("Mechanism input must be finite")
    return arr


def ppsc_apply(mech: PpscMechanism, beta: np.ndarray, seed: int, round: int = 0) -> PpscResult:
    """Mask beta with the given mechanism.

    Args:
        mech: Mechanism definition.
        beta: Local values, n x m (a 1-D input is read as m = 1).
        seed: Seed for this invocation.
        round: Protocol round, recorded in the message log.

    Returns:
        Masked values with the same column sums as beta, and the message log.
    """
    values = _as_values(beta)
    n, m = values.shape
    log = MessageLog()

    if mech.kind == "identity":
        return PpscResult(values.copy(), log)

    rng = substream(seed)
    if mech.kind == "ideal":
        noise = rng.normal(0.0, mech.sigma, (n, m)) if mech.sigma > 0 else np.zeros((n, m))
        noise -= noise.mean(axis=0)
        return PpscResult(values.mean(axis=0) + noise, log)

    g = mech.graph
    if g.n != n:
        raise MechanismError(f"Mechanism graph has {g.n} nodes but beta has {n} rows")
    masked = values.copy()
    for i, j in sorted(g.edges):
        nu = rng.normal(0.0, mech.sigma, m)
        masked[i] += nu
        masked[j] -= nu
        log.add(i, j, round, nu)
    return PpscResult(masked, log)


def check_sum_consistency(mech: Mechanism, beta: np.ndarray, trials: int, seed: int) -> SumConsistencyReport:
    """Worst relative drift of the column sums over independent invocations."""
    if trials < 1:
        raise MechanismError("At least one trial is required")
    values = _as_values(beta)
    total = values.sum(axis=0)
    scale = 1.0 + np.linalg.norm(total)
    worst = 0.0
    for k in range(trials):
        out = mech.apply(values, derive_seed(seed, k)).beta_sharp
        worst = max(worst, float(np.linalg.norm(out.sum(axis=0) - total) / scale))
    logger.debug("Sum consistency over %d trials: %.3e", trials, worst)
    return SumConsistencyReport(trials=trials, max_rel_error=worst)


def check_graph_compliance(log: MessageLog, g: Graph) -> bool:
    return all(r.sender == r.receiver or g.has_edge(r.sender, r.receiver) for r in log)


def empirical_identifiability(
    mech: Mechanism,
    beta_a: np.ndarray,
    beta_b: np.ndarray,
    samples: int,
    seed: int,
) -> IdentifiabilityReport:
    """Test whether repeated invocations tell two same-sum inputs apart.

    Each input gets its own independent stream of invocations. A node is
    distinguishable when the distance between its two sample means exceeds
    four standard errors.

    Raises:
        MechanismError: If the inputs have different sums or samples < 100.
    """
    a, b = _as_values(beta_a), _as_values(beta_b)
    if a.shape != b.shape:
        raise MechanismError(f"Input shapes differ: {a.shape} vs {b.shape}")
    scale = 1.0 + float(np.max(np.abs(np.concatenate([a, b]))))
    if np.max(np.abs(a.sum(axis=0) - b.sum(axis=0))) > 1e-9 * scale:
        raise MechanismError("Inputs must have the same sum")
    if samples < 100:
        raise MechanismError(f"At least 100 samples are required, got {samples}")

    out_a = np.stack([mech.apply(a, derive_seed(seed, 0, k)).beta_sharp for k in range(samples)])
    out_b = np.stack([mech.apply(b, derive_seed(seed, 1, k)).beta_sharp for k in range(samples)])

    gap = np.linalg.norm(out_a.mean(axis=0) - out_b.mean(axis=0), axis=1)
    var = out_a.var(axis=0, ddof=1) + out_b.var(axis=0, ddof=1)
    se = np.sqrt(var.sum(axis=1) / samples)
    floor = 1e-9 * scale
    distinguishable = bool(np.any(gap > np.maximum(4.0 * se, floor)))
    return IdentifiabilityReport(
        samples=samples,
        mean_gap=gap.tolist(),
        standard_error=se.tolist(),
        distinguishable=distinguishable,
    )


def mechanism_from_dict(data: dict, graph: Graph | None) -> PpscMechanism:
    kind = data.get("kind")
    sigma = float(data.get("sigma", 0.0))
    return PpscMechanism(kind=kind, sigma=sigma, graph=graph if kind == "edge_mask" else None)
