"""Tests for the distributed recursions."""

from __future__ import annotations

import numpy as np
import pytest

from dynpriv.datasets import privacy_region, reconstruction_instance, star_graph, star_weights
from dynpriv.lae import Ball, LinearEquation, project_rows, project_rows_onto_set
from dynpriv.netcore import metropolis_weights, spectral_stats
from dynpriv.ppsc import PpscMechanism
from dynpriv.protocols import (
    DpParams,
    ProtocolError,
    QuadraticObjectiveSet,
    Trajectory,
    closed_loop,
    gradient_check,
    read_trajectory_csv,
    run_average_consensus,
    run_cpa,
    run_dgd,
    run_dp_dles,
    run_pca,
    run_ppsc_consensus,
    run_ppsc_dgd,
    run_ppsc_les,
    write_trajectory_csv,
)

_PPSC_A = [
    [[0.8, 0.1], [0.0, 0.6]],
    [[0.6, -0.2], [0.1, 0.7]],
    [[0.7, 0.0], [0.2, 0.5]],
    [[0.5, 0.1], [-0.1, 0.8]],
]


def _x0(seed: int = 0, n: int = 4, m: int = 2) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-1.0, 1.0, (n, m))


def _random_instance(rng: np.random.Generator, n: int, m: int) -> tuple[np.ndarray, LinearEquation]:
    """Connected random graph with Metropolis weights and a solvable equation with unique solution."""
    from dynpriv.netcore import build_graph

    edges = [(i, i + 1) for i in range(n - 1)] + [tuple(rng.choice(n, 2, replace=False)) for _ in range(n)]
    w = metropolis_weights(build_graph(n, edges)).matrix
    H = rng.standard_normal((n, m))
    y = rng.standard_normal(m)
    return w, LinearEquation(H, H @ y)


def _dp(c: float = 0.1, lam: float = 0.05) -> DpParams:
    return DpParams(c=c, phi=0.9, lam=lam, psi=0.45, omega=privacy_region())


class TestTrajectory:
    def test_rejects_non_finite(self) -> None:
        traj = Trajectory(2, 1)
        with pytest.raises(ProtocolError, match="Non-finite"):
            traj.append(np.array([[1.0], [np.inf]]))

    def test_rejects_wrong_shape(self) -> None:
        traj = Trajectory(2, 1)
        with pytest.raises(ProtocolError, match="does not match"):
            traj.append(np.zeros((3, 1)))

    def test_accessors(self) -> None:
        traj = run_average_consensus(star_weights(), np.array([1.0, 2.0, 3.0, 4.0]), 3)
        assert len(traj) == 4
        assert traj.steps == 3
        assert traj.array().shape == (4, 4, 1)
        assert traj.node(0).shape == (4, 1)
        assert traj.flat(0).tolist() == [1.0, 2.0, 3.0, 4.0]

    def test_csv_round_trip(self, tmp_path) -> None:
        inst = reconstruction_instance()
        traj = run_cpa(inst.weights, inst.equation, inst.alpha, _x0(), 5)
        path = tmp_path / "traj.csv"
        write_trajectory_csv(traj, path)
        back = read_trajectory_csv(path)
        assert np.array_equal(back.array(), traj.array())
        assert back.meta["protocol"] == "cpa"
        assert back.meta["alpha"] == inst.alpha


class TestAverageConsensus:
    def test_converges_to_average(self) -> None:
        traj = run_average_consensus(star_weights(), np.array([1.0, 2.0, 3.0, 4.0]), 200)
        assert np.allclose(traj.final, 2.5, atol=1e-6)

    def test_average_preserved(self) -> None:
        traj = run_average_consensus(star_weights(), _x0(1), 50)
        avgs = traj.averages()
        assert np.max(np.abs(avgs - avgs[0])) <= 1e-12

    def test_fixed_point(self) -> None:
        beta = np.tile([0.3, -0.7], (4, 1))
        traj = run_average_consensus(star_weights(), beta, 10)
        assert all(np.array_equal(s, beta) for s in traj.states)

    def test_one_step(self) -> None:
        traj = run_average_consensus(np.full((2, 2), 0.5), np.array([1.0, 0.0]), 1)
        assert traj.final.ravel().tolist() == [0.5, 0.5]

    def test_dimension_mismatch(self) -> None:
        with pytest.raises(ProtocolError, match="does not match"):
            run_average_consensus(star_weights(), np.ones(3), 1)


class TestCpa:
    def test_example2_converges(self) -> None:
        inst = reconstruction_instance()
        traj = run_cpa(inst.weights, inst.equation, inst.alpha, _x0(2), 500)
        assert np.max(np.abs(traj.final - inst.solution)) <= 1e-4

    def test_stationary_at_solution(self) -> None:
        inst = reconstruction_instance()
        x0 = np.tile(inst.solution, (4, 1))
        traj = run_cpa(inst.weights, inst.equation, inst.alpha, x0, 20)
        assert np.max(np.abs(traj.array() - x0)) <= 1e-12

    def test_row_scaling_invariance(self) -> None:
        inst = reconstruction_instance()
        scaled = inst.equation.scaled(np.array([-2.0, 0.5, 3.0, -1.0]))
        a = run_cpa(inst.weights, inst.equation, inst.alpha, _x0(3), 30).array()
        b = run_cpa(inst.weights, scaled, inst.alpha, _x0(3), 30).array()
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_nonpositive_alpha(self) -> None:
        inst = reconstruction_instance()
        with pytest.raises(ProtocolError, match="alpha"):
            run_cpa(inst.weights, inst.equation, 0.0, _x0(), 1)

    def test_divergence_is_recorded(self) -> None:
        inst = reconstruction_instance()
        traj = run_cpa(inst.weights, inst.equation, 50.0, _x0(), 200, divergence_threshold=1e6)
        assert traj.diverged
        assert traj.steps < 200


class TestClosedLoop:
    def test_single_node(self) -> None:
        E = LinearEquation(np.array([[1.0, 0.0]]), np.array([0.0]))
        system = closed_loop(np.array([[1.0]]), E, 0.5)
        assert np.allclose(system.F, np.diag([0.5, 1.0]))

    def test_zero_alpha(self) -> None:
        inst = reconstruction_instance()
        system = closed_loop(inst.weights, inst.equation, 0.0)
        assert np.array_equal(system.F, np.kron(inst.weights.matrix, np.eye(2)))

    def test_example2_is_stable(self) -> None:
        inst = reconstruction_instance()
        assert closed_loop(inst.weights, inst.equation, inst.alpha).spectral_radius < 1.0

    def test_projector_blocks(self) -> None:
        inst = reconstruction_instance()
        Z = closed_loop(inst.weights, inst.equation, inst.alpha).Z_H
        for i in range(4):
            block = Z[2 * i:2 * i + 2, 2 * i:2 * i + 2]
            assert np.allclose(block, block.T)
            assert np.allclose(block @ block, block)
            assert np.trace(block) == pytest.approx(1.0)

    def test_affine_form_matches_recursion(self) -> None:
        rng = np.random.default_rng(8)
        for _ in range(10):
            n, m = int(rng.integers(2, 6)), int(rng.integers(1, 4))
            w, E = _random_instance(rng, n, m)
            alpha = float(rng.uniform(0.05, 0.5))
            system = closed_loop(w, E, alpha)
            x0 = rng.standard_normal((n, m))
            affine = system.simulate(x0, 20).array()
            recursion = run_cpa(w, E, alpha, x0, 20).array()
            assert np.max(np.abs(affine - recursion)) <= 1e-10


class TestPca:
    def test_example2_converges(self) -> None:
        inst = reconstruction_instance()
        traj = run_pca(inst.weights, inst.equation, _x0(4), 500)
        assert np.max(np.abs(traj.final - inst.solution)) <= 1e-4

    def test_stationary_at_solution(self) -> None:
        inst = reconstruction_instance()
        x0 = np.tile(inst.solution, (4, 1))
        traj = run_pca(inst.weights, inst.equation, x0, 10)
        assert np.max(np.abs(traj.final - x0)) <= 1e-12

    def test_single_node_fixed_after_one_step(self) -> None:
        E = LinearEquation(np.array([[1.0, 2.0]]), np.array([3.0]))
        traj = run_pca(np.array([[1.0]]), E, np.array([[5.0, -1.0]]), 3)
        assert np.allclose(traj.states[1], traj.states[3])
        assert traj.states[1][0] @ np.array([1.0, 2.0]) == pytest.approx(3.0)


class TestDgd:
    def test_decays_to_zero(self) -> None:
        objectives = QuadraticObjectiveSet([np.eye(2)] * 4, [np.zeros(2)] * 4)
        traj = run_dgd(metropolis_weights(star_graph()), objectives, _x0(5), 100)
        assert np.max(np.abs(traj.final)) < 1e-3 * np.max(np.abs(traj.states[0]))

    def test_average_tracks_joint_minimizer(self) -> None:
        rng = np.random.default_rng(6)
        A = np.array([[0.8, 0.1], [0.0, 0.6]])
        objectives = QuadraticObjectiveSet([A] * 4, [rng.standard_normal(2) for _ in range(4)])
        traj = run_dgd(star_weights(), objectives, _x0(6), 2000)
        assert np.allclose(traj.averages()[-1], objectives.minimizer(), atol=1e-2)

    def test_zero_gradients_reduce_to_consensus(self) -> None:
        x0 = np.tile([0.2, -0.4], (4, 1))
        A = [np.eye(2)] * 4
        objectives = QuadraticObjectiveSet(A, [x0[i] for i in range(4)])
        traj = run_dgd(star_weights(), objectives, x0, 20)
        assert np.allclose(traj.final, x0)

    def test_gradient_check(self) -> None:
        rng = np.random.default_rng(7)
        objectives = QuadraticObjectiveSet(
            [rng.standard_normal((3, 2)) for _ in range(4)], [rng.standard_normal(3) for _ in range(4)]
        )
        assert gradient_check(objectives, probes=20, seed=1) <= 1e-6

    def test_invalid_objectives(self) -> None:
        with pytest.raises(ProtocolError, match="Objective 1"):
            QuadraticObjectiveSet([np.eye(2), np.eye(3)], [np.zeros(2), np.zeros(3)])


class TestDpDles:
    def test_deterministic_given_seed(self) -> None:
        inst = reconstruction_instance()
        a = run_dp_dles(inst.weights, inst.equation, _dp(), _x0(), 20, seed=9).array()
        b = run_dp_dles(inst.weights, inst.equation, _dp(), _x0(), 20, seed=9).array()
        assert np.array_equal(a, b)

    def test_vanishing_noise_matches_noiseless(self) -> None:
        inst = reconstruction_instance()
        dp = _dp(c=1e-300, lam=0.3)
        traj = run_dp_dles(inst.weights, inst.equation, dp, _x0(), 30, seed=1)
        X = _x0()
        w = inst.weights.matrix
        for t in range(30):
            flat = project_rows_onto_set(dp.omega, X)
            X = w @ flat + dp.step(t) * (project_rows(inst.equation, flat) - flat)
        assert np.max(np.abs(traj.final - X)) <= 1e-6

    def test_exclude_self_differs(self) -> None:
        inst = reconstruction_instance()
        a = run_dp_dles(inst.weights, inst.equation, _dp(), _x0(), 5, seed=2)
        b = run_dp_dles(inst.weights, inst.equation, _dp(), _x0(), 5, seed=2, exclude_self=True)
        assert b.meta["exclude_self"]
        assert not np.allclose(a.final, b.final)

    def test_rank_deficient_weights_recorded(self) -> None:
        inst = reconstruction_instance()
        w = metropolis_weights(star_graph())
        assert not spectral_stats(w).full_rank
        traj = run_dp_dles(w, inst.equation, _dp(), _x0(), 3, seed=0)
        assert not traj.meta["full_rank"]

    @pytest.mark.parametrize(
        "kwargs, message",
        [
            ({"c": 0.0}, "Noise scale"),
            ({"phi": 1.0}, "phi"),
            ({"lam": -1.0}, "lambda"),
            ({"psi": 0.0}, "psi"),
        ],
    )
    def test_invalid_params(self, kwargs: dict, message: str) -> None:
        params = {"c": 0.1, "phi": 0.9, "lam": 0.1, "psi": 0.5, "omega": Ball(np.zeros(2), 1.0)}
        params.update(kwargs)
        with pytest.raises(ProtocolError, match=message):
            DpParams(**params)


class TestPpscSolvers:
    def test_consensus_reaches_average_after_one_round(self) -> None:
        g = star_graph()
        beta = _x0(10)
        traj = run_ppsc_consensus(g, PpscMechanism("edge_mask", 1.0, g), beta, 3, seed=4)
        assert np.allclose(traj.states[1], beta.mean(axis=0), atol=1e-12)
        assert traj.meta["graph_compliant"]
        assert traj.meta["messages"] == 3 * len(g.edges)

    def test_les_converges_and_is_transparent(self) -> None:
        inst = reconstruction_instance()
        g = inst.graph
        plain = run_ppsc_les(g, inst.equation, PpscMechanism("identity"), _x0(11), 200, seed=3)
        masked = run_ppsc_les(g, inst.equation, PpscMechanism("edge_mask", 2.0, g), _x0(11), 200, seed=3)
        gap = np.max(np.abs(np.array(plain.extras["consensus"]) - np.array(masked.extras["consensus"])))
        assert gap <= 1e-9
        assert np.max(np.abs(masked.final - inst.solution)) <= 1e-6

    def test_les_stationary_at_solution(self) -> None:
        inst = reconstruction_instance()
        y0 = np.tile(inst.solution, (4, 1))
        traj = run_ppsc_les(inst.graph, inst.equation, PpscMechanism("identity"), y0, 5, seed=0)
        assert np.max(np.abs(traj.final - y0)) <= 1e-12

    def test_les_inner_consensus(self) -> None:
        inst = reconstruction_instance()
        traj = run_ppsc_les(
            inst.graph, inst.equation, PpscMechanism("identity"), _x0(12), 300, seed=0,
            inner_steps=50, weights=inst.weights,
        )
        assert traj.meta["inner_steps"] == 50
        assert np.max(np.abs(traj.final - inst.solution)) <= 1e-3

    def test_les_unsolvable_recorded(self) -> None:
        g = star_graph()
        E = LinearEquation(np.array([[1.0, 0.0]] * 4), np.array([1.0, 2.0, 3.0, 4.0]))
        traj = run_ppsc_les(g, E, PpscMechanism("identity"), _x0(), 2, seed=0)
        assert not traj.meta["solvable"]

    def test_les_stops_on_divergence(self) -> None:
        inst = reconstruction_instance()
        traj = run_ppsc_les(
            inst.graph, inst.equation, PpscMechanism("identity"), _x0(), 20, seed=0, divergence_threshold=1e-6
        )
        assert traj.diverged
        assert traj.steps == 0

    def test_consensus_stops_on_divergence(self) -> None:
        g = star_graph()
        traj = run_ppsc_consensus(g, PpscMechanism("identity"), _x0(10), 5, seed=0, divergence_threshold=1e-6)
        assert traj.diverged
        assert traj.steps == 0

    def test_mechanism_graph_mismatch(self) -> None:
        from dynpriv.netcore import build_graph

        inst = reconstruction_instance()
        other = build_graph(4, [(0, 1), (1, 2), (2, 3)])
        with pytest.raises(ProtocolError, match="different graph"):
            run_ppsc_les(inst.graph, inst.equation, PpscMechanism("edge_mask", 1.0, other), _x0(), 1, seed=0)

    def test_dgd_reaches_joint_minimizer(self) -> None:
        rng = np.random.default_rng(13)
        objectives = QuadraticObjectiveSet([np.array(a) for a in _PPSC_A], [rng.standard_normal(2) for _ in range(4)])
        traj = run_ppsc_dgd(star_graph(), objectives, PpscMechanism("identity"), _x0(13), 5000, seed=0)
        assert np.allclose(traj.extras["consensus"][-1], objectives.minimizer(), atol=1e-2)

    def test_dgd_masking_is_transparent(self) -> None:
        rng = np.random.default_rng(14)
        g = star_graph()
        objectives = QuadraticObjectiveSet([np.array(a) for a in _PPSC_A], [rng.standard_normal(2) for _ in range(4)])
        plain = run_ppsc_dgd(g, objectives, PpscMechanism("identity"), _x0(14), 50, seed=0)
        masked = run_ppsc_dgd(g, objectives, PpscMechanism("edge_mask", 1.0, g), _x0(14), 50, seed=5)
        gap = np.max(np.abs(np.array(plain.extras["consensus"]) - np.array(masked.extras["consensus"])))
        assert gap <= 1e-9
