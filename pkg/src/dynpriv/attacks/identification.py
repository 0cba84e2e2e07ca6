"""Local eavesdroppers: passive and active identification of the closed loop.

Both attacks return a Realization (F*, C*) similar to
(F, E_i (x) I_m), F = W (x) I_m - alpha Z_H. The passive attack stacks
noiseless outputs into block Hankel-like matrices and solves for F* by
row selection; the active attack injects a periodic probe at the observer,
estimates the lifted impulse response from one steady-state period per
input channel and realizes it from a Hankel SVD.
"""

from __future__ import annotations

import logging
import math

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment

from ..lae import LinearEquation, solve_exact
from ..netcore import WeightMatrix, as_weight_matrix, spectral_stats
from ..protocols import ClosedLoopSystem, Trajectory, closed_loop
from ..randomness import substream
from .models import AttackError, IdentificationError, ObservationModel, ProbeSignal, Realization, StabilityReport

logger = logging.getLogger(__name__)

COND_THRESHOLD = 1e10
PROBE_COND_THRESHOLD = 1e6
PROBE_MAX_TRIES = 100
SETTLE_TOL = 1e-12
MAX_PERIODS = 20000
GAP_WARNING = 10.0
STABLE_MARGIN = 1e-9


def observability_rank(F: np.ndarray, C: np.ndarray, tol: float | None = None) -> int:
    """Rank of [C; CF; ...; CF^(N-1)]."""
    F = np.asarray(F, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    blocks = [C]
    for _ in range(F.shape[0] - 1):
        blocks.append(blocks[-1] @ F)
    return int(np.linalg.matrix_rank(np.vstack(blocks), tol=tol))


def spectrum_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Largest eigenvalue gap after optimal matching.

    Accepts square matrices or eigenvalue vectors.
    """
    ea, eb = (_spectrum(x) for x in (a, b))
    if ea.shape != eb.shape:
        raise AttackError(f"Spectra have different sizes: {ea.size} vs {eb.size}")
    cost = np.abs(ea[:, None] - eb[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max()) if ea.size else 0.0


def _spectrum(x: np.ndarray) -> np.ndarray:
    arr = np.asarray(x)
    if arr.ndim == 2:
        return np.linalg.eigvals(arr.astype(float))
    return arr.reshape(-1)


def stability_margin(W: WeightMatrix | np.ndarray, E: LinearEquation, alpha: float) -> StabilityReport:
    """Spectral radius of the CPA closed loop and the step-size bound lambda_min(W) + 1.

    Below the bound and with a unique solution the closed loop is expected
    to be Schur stable; a violation of that expectation is logged.
    """
    weights = as_weight_matrix(W)
    bound = spectral_stats(weights).lambda_min + 1.0
    rho = closed_loop(weights, E, alpha, verify=False).spectral_radius
    stable = rho < 1.0 - STABLE_MARGIN
    exact = solve_exact(E)
    lemma = exact is not None and exact.unique and 0 < alpha < bound
    if lemma and not stable:
        logger.warning("Closed loop not Schur stable (rho=%.6f) although alpha=%.4g < %.4g", rho, alpha, bound)
    return StabilityReport(rho=rho, stable=stable, alpha_bound=bound, lemma_applies=lemma)


def _select_rows(Y: np.ndarray, forced: int, k: int) -> np.ndarray:
    """First `forced` rows, then the k - forced rows that best complete the row space."""
    first = np.arange(forced)
    if k <= forced:
        return first[:k]
    basis, _ = np.linalg.qr(Y[first].T)
    rest = np.arange(forced, Y.shape[0])
    resid = Y[rest] - (Y[rest] @ basis) @ basis.T
    _, _, piv = scipy.linalg.qr(resid.T, pivoting=True, mode="economic")
    return np.concatenate([first, np.sort(rest[piv[: k - forced]])])


def passive_identify(
    obs: ObservationModel,
    traj: Trajectory,
    times: list[int] | None = None,
    cond_threshold: float = COND_THRESHOLD,
) -> Realization:
    """Identify (F*, C*) from a noiseless trajectory seen through obs.

    Args:
        obs: Observer neighborhood with a known solution y*.
        traj: CPA trajectory of the whole network.
        times: nm observation times, 0..nm-1 by default.
        cond_threshold: Largest accepted condition number of S Y.

    Returns:
        F* = S Ybar (S Y)^-1 and C* = [I 0].

    Raises:
        IdentificationError: On too few times, a short trajectory or an
            ill-conditioned selection.
    """
    order = traj.n * traj.m
    if obs.n != traj.n:
        raise IdentificationError(f"Observation model has n={obs.n}, trajectory has n={traj.n}")
    outputs = obs.outputs(traj.array())
    p_out = outputs.shape[1]
    blocks = math.ceil(order / p_out) + 1
    times = list(range(order)) if times is None else [int(t) for t in times]
    if len(times) < order:
        raise IdentificationError(f"Need {order} observation times, got {len(times)}")
    times = times[:order]
    if min(times) < 0 or max(times) + blocks + 1 > len(traj):
        raise IdentificationError(
            f"Trajectory of {len(traj)} states is too short for times up to {max(times)}"
        )

    lower = np.column_stack([outputs[t:t + blocks].reshape(-1) for t in times])
    upper = np.column_stack([outputs[t + 1:t + blocks + 1].reshape(-1) for t in times])
    rows = _select_rows(lower, p_out, order)
    selected = lower[rows]
    cond = np.linalg.cond(selected)
    if not np.isfinite(cond) or cond > cond_threshold:
        raise IdentificationError(f"Selected output matrix is singular (cond={cond:.3e})")

    F_star = np.linalg.solve(selected.T, upper[rows].T).T
    C_star = np.hstack([np.eye(p_out), np.zeros((p_out, order - p_out))])
    logger.debug("Passive identification: order %d, %d block rows, cond %.3e", order, blocks, cond)
    return Realization(F_star, C_star, method="passive")


def build_probe(samples: np.ndarray, cond_threshold: float = PROBE_COND_THRESHOLD) -> ProbeSignal:
    """Wrap one period of probe samples, shape (T, m, m), checking that R is invertible.

    R is the block circulant with block (l, s) equal to r((s - l) mod T).
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 3 or samples.shape[1] != samples.shape[2]:
        raise IdentificationError(f"Probe samples must have shape (T, m, m), got {samples.shape}")
    period, m, _ = samples.shape
    R = np.zeros((m * period, m * period))
    for lag in range(period):
        for s in range(period):
            R[lag * m:(lag + 1) * m, s * m:(s + 1) * m] = samples[(s - lag) % period]
    cond = np.linalg.cond(R)
    if not np.isfinite(cond) or cond >= cond_threshold:
        raise IdentificationError(f"Probe matrix R is ill-conditioned (cond={cond:.3e})")
    return ProbeSignal(period=period, samples=samples, R=R, condition_number=float(cond))


def make_probe(
    n: int,
    m: int,
    seed: int,
    cond_threshold: float = PROBE_COND_THRESHOLD,
    max_tries: int = PROBE_MAX_TRIES,
) -> ProbeSignal:
    """Draw a period-(2nm+1) uniform probe whose R has cond below the threshold."""
    period = 2 * n * m + 1
    for attempt in range(max_tries):
        samples = substream(seed, attempt).uniform(-1.0, 1.0, (period, m, m))
        try:
            return build_probe(samples, cond_threshold)
        except IdentificationError:
            logger.debug("Probe attempt %d rejected", attempt)
    raise IdentificationError(f"No probe with cond(R) < {cond_threshold:g} in {max_tries} tries")


def pre_probe_solution(
    system: ClosedLoopSystem, observer: int, seed: int, tol: float = 1e-14, max_steps: int = 200_000
) -> np.ndarray:
    """Observer's limit state of an unprobed run, used as y* when none is known."""
    x = substream(seed, 1).uniform(-1.0, 1.0, system.n * system.m)
    for _ in range(max_steps):
        nxt = system.step(x)
        done = np.linalg.norm(nxt - x) < tol * (1.0 + np.linalg.norm(x))
        x = nxt
        if done:
            break
    else:
        logger.warning("Pre-probe run did not settle in %d steps", max_steps)
    return x.reshape(system.n, system.m)[observer].copy()


def _steady_period(
    system: ClosedLoopSystem,
    C: np.ndarray,
    B: np.ndarray,
    offset: np.ndarray,
    probe: ProbeSignal,
    campaign: int,
    x0: np.ndarray,
    settle_periods: int | None,
    settle_tol: float,
    max_periods: int,
) -> np.ndarray:
    """Outputs over one period once the probed system is periodic, shape (T, p)."""
    x = x0.copy()
    previous = None
    for k in range(max_periods + 1):
        period = np.empty((probe.period, C.shape[0]))
        for s in range(probe.period):
            period[s] = C @ x - offset
            x = system.step(x) + B @ probe.input(s, campaign)
        if settle_periods is not None:
            if k >= settle_periods:
                return period
        elif previous is not None:
            if np.linalg.norm(period - previous) < settle_tol * (1.0 + np.linalg.norm(period)):
                logger.debug("Campaign %d settled after %d periods", campaign, k + 1)
                return period
        previous = period
    raise IdentificationError(f"Probed outputs did not settle within {max_periods} periods")


def active_identify(
    obs: ObservationModel,
    W: WeightMatrix | np.ndarray,
    E: LinearEquation,
    alpha: float,
    probe: ProbeSignal,
    settle_periods: int | None = None,
    seed: int = 0,
    settle_tol: float = SETTLE_TOL,
    max_periods: int = MAX_PERIODS,
    gap_warning: float = GAP_WARNING,
) -> Realization:
    """Identify (F*, C*) by probing the observer's own state.

    The network runs CPA from a random start while the observer adds
    r(t) to its state, one campaign per input channel. W, E and alpha drive
    the simulated network; the attack itself only uses observed outputs.

    Raises:
        IdentificationError: If the closed loop is not stable, the probe is
            too short, or the outputs never become periodic.
    """
    stability = stability_margin(W, E, alpha)
    if not stability.stable:
        raise IdentificationError(f"Closed loop is not stable (rho={stability.rho:.6f})")
    order = E.n * E.m
    if probe.m != E.m:
        raise IdentificationError(f"Probe has {probe.m} channels, state dimension is {E.m}")
    if probe.period < 2 * order + 1:
        raise IdentificationError(f"Probe period {probe.period} is shorter than {2 * order + 1}")

    system = closed_loop(W, E, alpha, verify=False)
    if obs.known_solution is None:
        obs = obs.with_solution(pre_probe_solution(system, obs.observer, seed))
        logger.info("Using pre-probe limit %s as y*", np.array2string(obs.known_solution, precision=6))
    y_star = obs.known_solution
    C = obs.output_matrix(E.m)
    B = obs.injection_matrix(E.m)
    offset = np.tile(y_star, len(obs.neighborhood))
    x0 = substream(seed, 0).uniform(-1.0, 1.0, order)

    periods = [
        _steady_period(system, C, B, offset, probe, c, x0, settle_periods, settle_tol, max_periods)
        for c in range(E.m)
    ]
    Y = np.concatenate(
        [np.column_stack([periods[c][s] for c in range(E.m)]) for s in range(probe.period)], axis=1
    )
    G = np.linalg.solve(probe.R.T, Y.T).T

    p_out = C.shape[0]
    m = E.m
    rows = order + 1
    cols = probe.period - rows

    def markov(k: int) -> np.ndarray:
        return G[:, k * m:(k + 1) * m]

    hankel = np.block([[markov(a + b + 1) for b in range(cols)] for a in range(rows)])
    U, sv, _ = np.linalg.svd(hankel)
    if sv.size > order and sv[order] > 0:
        gap = sv[order - 1] / sv[order]
        if gap < gap_warning:
            logger.warning("Weak Hankel singular value gap %.3g at order %d", gap, order)
    Us = U[:, :order]
    F_star = np.linalg.pinv(Us[:-p_out]) @ Us[p_out:]
    C_star = Us[:p_out]
    return Realization(F_star, C_star, method="active")
