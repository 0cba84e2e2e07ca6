"""From an identified realization back to the equation (H, z).

Any valid similarity T satisfies

    (W (x) I_m) T - alpha Q = T A*,   Q = Z_H T,   (E_i (x) I_m) T = C*,

which is linear in (T, Q). The nonlinear part, Q = Z_H T with Z_H built
from unit rows of H, is handled by a joint least-squares fit over H and the
unobserved rows of T.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
from scipy.optimize import least_squares

from ..lae import CanonicalEquation, canonical_distance, canonical_row
from ..netcore import WeightMatrix, as_weight_matrix
from ..randomness import substream
from .models import (
    AttackError,
    ObservationModel,
    Realization,
    RecoveryOptions,
    RecoveryResult,
    RecoveryStep,
    VectorizedSystem,
)

logger = logging.getLogger(__name__)


def similar_realization(F: np.ndarray, C: np.ndarray, T: np.ndarray) -> Realization:
    """(T^-1 F T, C T)."""
    T = np.asarray(T, dtype=float)
    return Realization(np.linalg.solve(T, F @ T), np.asarray(C, dtype=float) @ T, method="similar")


def _dims(realization: Realization, obs: ObservationModel) -> tuple[int, int]:
    order = realization.order
    if order % obs.n:
        raise AttackError(f"Realization order {order} is not a multiple of n={obs.n}")
    m = order // obs.n
    if realization.C_star.shape != (len(obs.neighborhood) * m, order):
        raise AttackError(f"C* has shape {realization.C_star.shape}, expected {(len(obs.neighborhood) * m, order)}")
    return order, m


def build_vectorized_system(
    realization: Realization, W: WeightMatrix | np.ndarray, alpha: float, obs: ObservationModel
) -> VectorizedSystem:
    """Stack the similarity conditions into one sparse system in (vec T, vec Q).

    vec is column-major. The system is solved in the minimum-norm
    least-squares sense; rank_deficiency counts the free directions.
    """
    order, m = _dims(realization, obs)
    w = as_weight_matrix(W).matrix
    eye = sp.identity(order, format="csr")
    mixing = sp.kron(sp.csr_matrix(w), sp.identity(m))
    S = sp.kron(eye, mixing) - sp.kron(sp.csr_matrix(realization.A_star.T), eye)
    C = sp.csr_matrix(obs.output_matrix(m))
    top = sp.hstack([S, -alpha * sp.identity(order * order)])
    bottom = sp.hstack([sp.kron(eye, C), sp.csr_matrix((order * C.shape[0], order * order))])
    matrix = sp.vstack([top, bottom]).tocsr()
    rhs = np.concatenate([np.zeros(order * order), realization.C_star.reshape(-1, order="F")])

    dense = matrix.toarray()
    solution, *_ = np.linalg.lstsq(dense, rhs, rcond=None)
    rank = int(np.linalg.matrix_rank(dense))
    residual = float(np.linalg.norm(dense @ solution - rhs))
    deficiency = dense.shape[1] - rank
    logger.debug("Vectorized system %s, rank deficiency %d, residual %.3e", dense.shape, deficiency, residual)
    return VectorizedSystem(matrix, rhs, solution, residual, deficiency, order)


class _JointProblem:
    """Residual F_H T - T A* over (unit rows of H, unobserved rows of T)."""

    def __init__(self, realization: Realization, w: np.ndarray, alpha: float, obs: ObservationModel) -> None:
        self.order, self.m = _dims(realization, obs)
        self.n = obs.n
        self.alpha = alpha
        self.A = realization.A_star
        self.mixing = np.kron(w, np.eye(self.m))
        self.observed = obs.state_rows(self.m)
        self.free = np.setdiff1d(np.arange(self.order), self.observed)
        self.C_star = realization.C_star
        self.evaluations = 0
        self.history: list[RecoveryStep] = []
        self._best = np.inf

    def closed_loop(self, H: np.ndarray) -> np.ndarray:
        F = self.mixing.copy()
        unit = H / np.linalg.norm(H, axis=1, keepdims=True)
        for i, h in enumerate(unit):
            sl = slice(i * self.m, (i + 1) * self.m)
            F[sl, sl] -= self.alpha * np.outer(h, h)
        return F

    def similarity(self, T_free: np.ndarray) -> np.ndarray:
        T = np.empty((self.order, self.order))
        T[self.observed] = self.C_star
        T[self.free] = T_free
        return T

    def split(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        k = self.n * self.m
        return theta[:k].reshape(self.n, self.m), theta[k:].reshape(len(self.free), self.order)

    def residual(self, theta: np.ndarray) -> np.ndarray:
        H, T_free = self.split(theta)
        T = self.similarity(T_free)
        r = (self.closed_loop(H) @ T - T @ self.A).reshape(-1)
        self.evaluations += 1
        objective = float(r @ r)
        if objective < self._best:
            self._best = objective
            self.history.append(RecoveryStep(self.evaluations, objective, H.copy()))
        return r

    def best_similarity(self, H: np.ndarray) -> np.ndarray:
        """Unobserved rows of T minimizing the residual for fixed H."""
        F = self.closed_loop(H)
        K = np.kron(np.eye(self.order), F) - np.kron(self.A.T, np.eye(self.order))
        idx = np.arange(self.order * self.order).reshape(self.order, self.order, order="F")
        free_idx = idx[self.free].reshape(-1)
        fixed_idx = idx[self.observed].reshape(-1)
        fixed = self.C_star.reshape(-1)
        sol, *_ = np.linalg.lstsq(K[:, free_idx], -K[:, fixed_idx] @ fixed, rcond=None)
        return sol.reshape(len(self.free), self.order)


def _start_points(init_H: np.ndarray, opt: RecoveryOptions) -> list[np.ndarray]:
    starts = [init_H]
    scale = np.linalg.norm(init_H)
    for k in range(1, opt.restarts):
        noise = substream(opt.seed, k).standard_normal(init_H.shape)
        starts.append(init_H + opt.perturbation * scale * noise / np.linalg.norm(noise))
    return starts


def recover_equation(
    realization: Realization,
    W: WeightMatrix | np.ndarray,
    alpha: float,
    obs: ObservationModel,
    y_star: np.ndarray,
    init_H: np.ndarray,
    opt: RecoveryOptions | None = None,
) -> RecoveryResult:
    """Fit H so that F_H is similar to A* through a T with (E_i (x) I_m) T = C*.

    Levenberg-Marquardt runs jointly over H and the unobserved rows of T,
    starting from init_H and the best T for it, plus restarts - 1 perturbed
    starts. z is read off the known solution: z_i = H_i . y*.

    Returns:
        The canonical recovered equation and the best objective found.
    """
    opt = opt or RecoveryOptions()
    w = as_weight_matrix(W).matrix
    y_star = np.asarray(y_star, dtype=float).reshape(-1)
    init_H = np.asarray(init_H, dtype=float)
    if init_H.shape != (obs.n, y_star.size):
        raise AttackError(f"init_H has shape {init_H.shape}, expected {(obs.n, y_star.size)}")
    if np.any(np.linalg.norm(init_H, axis=1) == 0):
        raise AttackError("init_H has a zero row")

    best: tuple[float, np.ndarray] | None = None
    problem = _JointProblem(realization, w, alpha, obs)
    starts = _start_points(init_H, opt)
    for k, H0 in enumerate(starts):
        theta0 = np.concatenate([H0.reshape(-1), problem.best_similarity(H0).reshape(-1)])
        r0 = problem.residual(theta0)
        if float(r0 @ r0) < opt.tol:
            theta = theta0
        else:
            fit = least_squares(
                problem.residual,
                theta0,
                method="lm",
                xtol=1e-15,
                ftol=1e-15,
                gtol=1e-15,
                max_nfev=opt.max_iter * (theta0.size + 1),
            )
            theta = fit.x
        r = problem.residual(theta)
        objective = float(r @ r)
        H, _ = problem.split(theta)
        logger.debug("Recovery start %d: objective %.3e", k, objective)
        if best is None or objective < best[0]:
            best = (objective, H / np.linalg.norm(H, axis=1, keepdims=True))
        if best[0] < opt.tol:
            break

    objective, H = best
    rows = [canonical_row(h, float(h @ y_star)) for h in H]
    H_hat = CanonicalEquation(np.array([h for h, _ in rows]), np.array([z for _, z in rows]))
    converged = objective < opt.tol
    if not converged:
        logger.info("Equation recovery stopped at objective %.3e", objective)
    return RecoveryResult(
        H_hat=H_hat,
        objective=objective,
        converged=converged,
        restarts_run=k + 1,
        history=problem.history,
    )


def recovery_convergence(
    result: RecoveryResult, truth: CanonicalEquation, y_star: np.ndarray
) -> list[dict]:
    """Objective and canonical distance to the truth at every improvement of a run."""
    y_star = np.asarray(y_star, dtype=float).reshape(-1)
    records = []
    for step in result.history:
        rows = [canonical_row(h, float(h @ y_star)) for h in step.H]
        estimate = CanonicalEquation(np.array([h for h, _ in rows]), np.array([z for _, z in rows]))
        records.append({
            "evaluation": step.evaluation,
            "objective": step.objective,
            "distance": canonical_distance(estimate, truth),
        })
    return records
