"""Tests for equation recovery from an identified realization."""

from __future__ import annotations

import numpy as np
import pytest

from dynpriv.attacks.models import AttackError, ObservationModel, Realization, RecoveryOptions
from dynpriv.attacks.recovery import (
    build_vectorized_system,
    recover_equation,
    recovery_convergence,
    similar_realization,
)
from dynpriv.datasets import IDENTIFICATION_OBSERVER, identification_instance
from dynpriv.lae import canonical_distance, canonical_form
from dynpriv.protocols import closed_loop


def _truth():
    inst = identification_instance()
    obs = ObservationModel.at_node(inst.graph, IDENTIFICATION_OBSERVER, inst.solution)
    system = closed_loop(inst.weights, inst.equation, inst.alpha)
    realization = Realization(system.F, obs.output_matrix(2), method="truth")
    return inst, obs, system, realization


def _random_similarity(seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.eye(8) + 0.3 * rng.standard_normal((8, 8))


class TestSimilarRealization:
    def test_preserves_spectrum_and_output(self) -> None:
        _, _, system, truth = _truth()
        T = _random_similarity(0)
        similar = similar_realization(truth.F_star, truth.C_star, T)
        assert np.allclose(T @ similar.F_star, truth.F_star @ T)
        assert np.allclose(similar.C_star, truth.C_star @ T)
        assert np.allclose(np.sort_complex(similar.eigenvalues()), np.sort_complex(np.linalg.eigvals(system.F)))


class TestVectorizedSystem:
    def test_truth_satisfies_system(self) -> None:
        inst, obs, system, truth = _truth()
        vec = build_vectorized_system(truth, inst.weights, inst.alpha, obs)
        assert vec.matrix.shape == (64 + 32, 128)
        assert vec.residual_of(np.eye(8), system.Z_H) <= 1e-10
        assert vec.residual <= 1e-8
        assert vec.rank_deficiency > 0

    def test_similar_realization_satisfies_system(self) -> None:
        inst, obs, system, truth = _truth()
        T = _random_similarity(1)
        similar = similar_realization(truth.F_star, truth.C_star, T)
        vec = build_vectorized_system(similar, inst.weights, inst.alpha, obs)
        assert vec.residual_of(T, system.Z_H @ T) <= 1e-8

    def test_minimum_norm_split(self) -> None:
        inst, obs, _, truth = _truth()
        vec = build_vectorized_system(truth, inst.weights, inst.alpha, obs)
        T, Q = vec.split()
        assert T.shape == Q.shape == (8, 8)
        assert np.allclose(obs.output_matrix(2) @ T, truth.C_star, atol=1e-8)

    def test_order_must_match_network(self) -> None:
        inst, obs, _, _ = _truth()
        bad = Realization(np.eye(7), np.zeros((4, 7)))
        with pytest.raises(AttackError, match="not a multiple"):
            build_vectorized_system(bad, inst.weights, inst.alpha, obs)


class TestRecoverEquation:
    def test_exact_start_converges_immediately(self) -> None:
        inst, obs, _, truth = _truth()
        result = recover_equation(truth, inst.weights, inst.alpha, obs, inst.solution, inst.equation.H)
        assert result.converged
        assert canonical_distance(result.H_hat, canonical_form(inst.equation)) <= 1e-9

    def test_near_truth_start(self) -> None:
        inst, obs, _, truth = _truth()
        rng = np.random.default_rng(2)
        delta = rng.standard_normal(inst.equation.H.shape)
        init = inst.equation.H + 0.01 * np.linalg.norm(inst.equation.H) * delta / np.linalg.norm(delta)
        result = recover_equation(truth, inst.weights, inst.alpha, obs, inst.solution, init)
        assert result.converged
        assert canonical_distance(result.H_hat, canonical_form(inst.equation)) <= 1e-4

    def test_similar_realization_near_truth(self) -> None:
        inst, obs, _, truth = _truth()
        similar = similar_realization(truth.F_star, truth.C_star, _random_similarity(3))
        init = inst.equation.H * np.array([[1.0, 1.005]])
        result = recover_equation(similar, inst.weights, inst.alpha, obs, inst.solution, init)
        assert canonical_distance(result.H_hat, canonical_form(inst.equation)) <= 1e-4

    def test_convergence_history(self) -> None:
        inst, obs, _, truth = _truth()
        init = inst.equation.H * np.array([[1.0, 1.01]])
        result = recover_equation(truth, inst.weights, inst.alpha, obs, inst.solution, init)
        records = recovery_convergence(result, canonical_form(inst.equation), inst.solution)
        objectives = [r["objective"] for r in records]
        assert objectives == sorted(objectives, reverse=True)
        assert len(set(objectives)) == len(objectives)
        assert records[-1]["objective"] <= result.objective

    def test_restarts_are_reported(self) -> None:
        inst, obs, _, truth = _truth()
        opt = RecoveryOptions(restarts=3, seed=1)
        result = recover_equation(truth, inst.weights, inst.alpha, obs, inst.solution, inst.equation.H, opt)
        assert result.restarts_run == 1

    def test_bad_init_shape(self) -> None:
        inst, obs, _, truth = _truth()
        with pytest.raises(AttackError, match="init_H has shape"):
            recover_equation(truth, inst.weights, inst.alpha, obs, inst.solution, np.ones((3, 2)))

    def test_zero_row(self) -> None:
        inst, obs, _, truth = _truth()
        init = np.array(inst.equation.H)
        init[2] = 0.0
        with pytest.raises(AttackError, match="zero row"):
            recover_equation(truth, inst.weights, inst.alpha, obs, inst.solution, init)
