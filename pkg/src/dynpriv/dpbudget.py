"""Privacy budget arithmetic for the differentially private solver.

The solver is epsilon-differentially private for (delta_A, delta_b)-adjacent
datasets when

    (phi / (phi - psi)) * (lambda / c) * sqrt(n m) * (B delta_A + delta_b) / sigma_min(W) <= epsilon.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import gaussian_kde

from .lae import LinearEquation
from .netcore import WeightMatrix
from .protocols import DpParams, run_dp_dles
from .randomness import derive_seed, sample_laplace, substream

logger = logging.getLogger(__name__)


class BudgetError(ValueError):
    """Raised when the budget is undefined for the given parameters."""


@dataclass(frozen=True)
class BudgetInput:
    n: int
    m: int
    lam: float
    psi: float
    phi: float
    B: float
    delta_A: float
    delta_b: float
    sigma_min_W: float
    c: float | None = None

    def __post_init__(self) -> None:
        if self.n < 1 or self.m < 1:
            raise BudgetError(f"Dimensions must be positive, got n={self.n}, m={self.m}")
        for name in ("lam", "psi", "phi", "sigma_min_W"):
            if not getattr(self, name) > 0:
                raise BudgetError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("B", "delta_A", "delta_b"):
            if getattr(self, name) < 0:
                raise BudgetError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.c is not None and not self.c > 0:
            raise BudgetError(f"c must be positive, got {self.c}")
        if self.psi >= self.phi:
            raise BudgetError(f"psi={self.psi} >= phi={self.phi}: the budget is infinite")

    @property
    def sensitivity(self) -> float:
        """sqrt(nm) * (B delta_A + delta_b) / sigma_min(W)."""
        return math.sqrt(self.n * self.m) * (self.B * self.delta_A + self.delta_b) / self.sigma_min_W

    @property
    def decay_factor(self) -> float:
        return self.phi / (self.phi - self.psi)

    @classmethod
    def from_dict(cls, data: dict) -> BudgetInput:
        return cls(
            n=int(data["n"]),
            m=int(data["m"]),
            lam=float(data["lambda"]),
            psi=float(data["psi"]),
            phi=float(data["phi"]),
            B=float(data["B"]),
            delta_A=float(data["delta_A"]),
            delta_b=float(data["delta_b"]),
            sigma_min_W=float(data["sigma_min_W"]),
            c=float(data["c"]) if data.get("c") is not None else None,
        )


@dataclass
class Certificate:
    lhs: float
    epsilon: float

    @property
    def certified(self) -> bool:
        return self.lhs <= self.epsilon


@dataclass
class LaplaceRow:
    t: int
    scale: float
    expected_var: float
    empirical_var: float
    mean: float
    var_ok: bool
    mean_ok: bool


@dataclass
class LaplaceReport:
    samples: int
    rows: list[LaplaceRow] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.var_ok and r.mean_ok for r in self.rows)


def budget_lhs(inp: BudgetInput) -> float:
    if inp.c is None:
        raise BudgetError("Noise scale c is required to evaluate the budget")
    return inp.decay_factor * (inp.lam / inp.c) * inp.sensitivity


def certify(inp: BudgetInput, epsilon: float) -> Certificate:
    return Certificate(lhs=budget_lhs(inp), epsilon=epsilon)


def calibrate_c(target_eps: float, inp: BudgetInput) -> float:
    """Smallest noise scale c that certifies target_eps."""
    if not target_eps > 0:
        raise BudgetError(f"Target epsilon must be positive, got {target_eps}")
    return inp.decay_factor * inp.lam * inp.sensitivity / target_eps


def calibrate_lambda(target_eps: float, inp: BudgetInput) -> float:
    """Largest step base lambda that certifies target_eps for the given c."""
    if not target_eps > 0:
        raise BudgetError(f"Target epsilon must be positive, got {target_eps}")
    if inp.c is None:
        raise BudgetError("Noise scale c is required to calibrate lambda")
    return target_eps * inp.c / (inp.decay_factor * inp.sensitivity)


def laplace_stats_check(c: float, phi: float, t_max: int, samples: int, seed: int) -> LaplaceReport:
    """Compare drawn Laplace noise with its nominal moments for t = 0..t_max.

    Moments are checked on draws divided by their scale so that vanishing
    scales do not underflow.
    """
    if samples < 1000:
        raise BudgetError(f"At least 1000 samples are required, got {samples}")
    report = LaplaceReport(samples=samples)
    for t in range(t_max + 1):
        scale = c * phi**t
        draws = sample_laplace(substream(seed, t), scale, samples)
        if scale > 0:
            unit = draws / scale
            var_ratio = float(unit.var()) / 2.0
            mean_unit = float(unit.mean())
        else:
            var_ratio, mean_unit = 1.0, 0.0
        se_unit = math.sqrt(2.0 / samples)
        report.rows.append(LaplaceRow(
            t=t,
            scale=scale,
            expected_var=2.0 * scale**2,
            empirical_var=float(draws.var()),
            mean=float(draws.mean()),
            var_ok=abs(var_ratio - 1.0) <= 0.1,
            mean_ok=abs(mean_unit) <= 4.0 * se_unit,
        ))
    return report


def empirical_privacy_loss(
    W: WeightMatrix | np.ndarray,
    E: LinearEquation,
    E2: LinearEquation,
    dp: DpParams,
    x0: np.ndarray,
    node: int,
    samples: int,
    seed: int,
    grid: int = 50,
) -> float:
    """Kernel-density estimate of the first-step privacy loss at one node.

    Runs one solver step for both datasets with independent noise and
    returns max |log p - log p'| of the first coordinate of x_node(1) over
    the central 10-90% quantile range of the pooled draws. A smoke test,
    not a proof.
    """
    first = []
    for k, eq in enumerate((E, E2)):
        draws = np.empty(samples)
        for s in range(samples):
            traj = run_dp_dles(W, eq, dp, x0, 1, derive_seed(seed, k, s))
            draws[s] = traj.states[1][node, 0]
        first.append(draws)

    pooled = np.concatenate(first)
    lo, hi = np.quantile(pooled, [0.1, 0.9])
    points = np.linspace(lo, hi, grid)
    p = gaussian_kde(first[0])(points)
    q = gaussian_kde(first[1])(points)
    loss = float(np.max(np.abs(np.log(p) - np.log(q))))
    logger.debug("Empirical privacy loss at node %d: %.4f", node, loss)
    return loss


def with_c(inp: BudgetInput, c: float) -> BudgetInput:
    return replace(inp, c=c)
