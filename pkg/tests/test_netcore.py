"""Tests for graphs, weight matrices and spectral statistics."""

from __future__ import annotations

import numpy as np
import pytest

from dynpriv.datasets import star_graph, star_weights
from dynpriv.netcore import (
    GraphError,
    WeightMatrix,
    build_graph,
    metropolis_weights,
    spectral_stats,
    validate_weight_matrix,
    weights_for_graph,
)


class TestBuildGraph:
    def test_edges_are_normalized_and_deduplicated(self) -> None:
        g = build_graph(3, [(1, 0), (0, 1), (2, 1)])
        assert g.edges == frozenset({(0, 1), (1, 2)})
        assert g.connected

    def test_neighbors_are_sorted(self) -> None:
        g = build_graph(4, [(0, 3), (0, 1), (0, 2)])
        assert g.neighbors(0) == [1, 2, 3]
        assert g.neighbors(2) == [0]
        assert g.degree(0) == 3

    def test_disconnected_is_flagged(self) -> None:
        g = build_graph(4, [(0, 1), (2, 3)])
        assert not g.connected

    def test_too_few_nodes(self) -> None:
        with pytest.raises(GraphError, match="at least 2 nodes"):
            build_graph(1, [])

    def test_out_of_range(self) -> None:
        with pytest.raises(GraphError, match="out of range"):
            build_graph(3, [(0, 3)])

    def test_self_loop(self) -> None:
        with pytest.raises(GraphError, match="Self-loop"):
            build_graph(3, [(1, 1)])

    def test_to_dict(self) -> None:
        assert star_graph().to_dict() == {"n": 4, "edges": [[0, 1], [0, 2], [0, 3]]}


class TestMetropolisWeights:
    def test_star_values(self) -> None:
        w = metropolis_weights(star_graph()).matrix
        assert w[0, 1] == pytest.approx(0.25)
        assert w[1, 1] == pytest.approx(0.75)
        assert w[0, 0] == pytest.approx(0.25)

    def test_star_is_rank_deficient(self) -> None:
        stats = spectral_stats(metropolis_weights(star_graph()))
        assert sorted(stats.eigenvalues) == pytest.approx([0.0, 0.75, 0.75, 1.0], abs=1e-12)
        assert not stats.full_rank

    def test_random_graphs_are_valid(self) -> None:
        rng = np.random.default_rng(11)
        for _ in range(20):
            n = int(rng.integers(3, 8))
            edges = [(i, i + 1) for i in range(n - 1)]
            edges += [tuple(rng.choice(n, 2, replace=False)) for _ in range(n)]
            g = build_graph(n, edges)
            assert validate_weight_matrix(metropolis_weights(g), g).valid

    def test_disconnected_rejected(self) -> None:
        with pytest.raises(GraphError, match="connected"):
            metropolis_weights(build_graph(4, [(0, 1), (2, 3)]))


class TestValidateWeightMatrix:
    def test_star_weights_valid(self) -> None:
        assert validate_weight_matrix(star_weights(), star_graph()).valid

    def test_reports_every_violation(self) -> None:
        w = np.array(star_weights().matrix)
        w[1, 2] = w[2, 1] = 0.1
        report = validate_weight_matrix(w, star_graph())
        assert not report.valid
        assert any("non-edge (1, 2)" in v for v in report.violations)
        assert any("row 1 sums" in v for v in report.violations)

    def test_non_positive_diagonal(self) -> None:
        g = build_graph(2, [(0, 1)])
        report = validate_weight_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]), g)
        assert any("diagonal" in v for v in report.violations)

    def test_shape_mismatch(self) -> None:
        report = validate_weight_matrix(np.eye(3), star_graph())
        assert report.violations == ["shape (3, 3) does not match n=4"]

    def test_weights_for_graph_rejects_invalid(self) -> None:
        with pytest.raises(GraphError, match="Invalid weight matrix"):
            weights_for_graph(star_graph(), np.eye(4) * 0.5)

    def test_weights_for_graph_defaults_to_metropolis(self) -> None:
        w = weights_for_graph(star_graph())
        assert np.allclose(w.matrix, metropolis_weights(star_graph()).matrix)


class TestSpectralStats:
    def test_star_weights(self) -> None:
        stats = spectral_stats(star_weights())
        assert stats.full_rank
        assert -0.235 < stats.lambda_min < -0.225
        assert stats.sigma_min == pytest.approx(abs(stats.lambda_min))
        assert stats.sigma_max == pytest.approx(1.0)
        assert np.prod(stats.eigenvalues) == pytest.approx(np.linalg.det(star_weights().matrix))

    def test_non_symmetric_rejected(self) -> None:
        with pytest.raises(GraphError, match="symmetric"):
            spectral_stats(np.array([[0.5, 0.5], [0.3, 0.7]]))


def test_weight_matrix_is_read_only() -> None:
    w = WeightMatrix(np.eye(2))
    with pytest.raises(ValueError):
        w.matrix[0, 0] = 2.0


def test_weight_matrix_must_be_square() -> None:
    with pytest.raises(GraphError, match="square"):
        WeightMatrix(np.ones((2, 3)))
