"""Tests for privacy-preserving summation mechanisms."""

from __future__ import annotations

import numpy as np
import pytest

from dynpriv.datasets import star_graph
from dynpriv.netcore import build_graph
from dynpriv.ppsc import (
    MechanismError,
    MessageLog,
    PpscMechanism,
    PpscResult,
    check_graph_compliance,
    check_sum_consistency,
    empirical_identifiability,
    mechanism_from_dict,
    ppsc_apply,
)


def _beta(seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-1.0, 1.0, (4, 2))


def _same_sum(beta: np.ndarray, seed: int = 1) -> np.ndarray:
    shift = np.random.default_rng(seed).standard_normal(beta.shape)
    return beta + shift - shift.mean(axis=0)


class _DriftingMechanism:
    """Adds a constant to every node, so the column sums move."""

    def apply(self, beta: np.ndarray, seed: int, round: int = 0) -> PpscResult:
        return PpscResult(np.asarray(beta, dtype=float) + 0.5, MessageLog())


class TestMechanismConstruction:
    def test_unknown_kind(self) -> None:
        with pytest.raises(MechanismError, match="Unknown mechanism kind"):
            PpscMechanism("shuffle")

    def test_edge_mask_needs_graph(self) -> None:
        with pytest.raises(MechanismError, match="needs a graph"):
            PpscMechanism("edge_mask", 1.0)

    def test_edge_mask_needs_connected_graph(self) -> None:
        with pytest.raises(MechanismError, match="connected"):
            PpscMechanism("edge_mask", 1.0, build_graph(4, [(0, 1), (2, 3)]))

    def test_edge_mask_needs_positive_sigma(self) -> None:
        with pytest.raises(MechanismError, match="sigma > 0"):
            PpscMechanism("edge_mask", 0.0, star_graph())

    def test_from_dict(self) -> None:
        g = star_graph()
        mech = mechanism_from_dict({"kind": "edge_mask", "sigma": 2}, g)
        assert mech.graph is g and mech.sigma == 2.0
        assert mechanism_from_dict({"kind": "ideal"}, g).graph is None
        assert mech.to_dict() == {"kind": "edge_mask", "sigma": 2.0}


class TestApply:
    def test_edge_mask_preserves_sum(self) -> None:
        g = star_graph()
        beta = _beta()
        result = ppsc_apply(PpscMechanism("edge_mask", 5.0, g), beta, seed=3)
        assert np.allclose(result.beta_sharp.sum(axis=0), beta.sum(axis=0), atol=1e-12)
        assert not np.allclose(result.beta_sharp, beta)

    def test_edge_mask_log_follows_edges(self) -> None:
        g = star_graph()
        result = ppsc_apply(PpscMechanism("edge_mask", 1.0, g), _beta(), seed=0, round=7)
        assert len(result.log) == len(g.edges)
        assert all(r.round == 7 and r.dim == 2 for r in result.log)
        assert check_graph_compliance(result.log, g)
        assert "payload" not in result.log.records[0].to_dict()

    def test_ideal_output_is_average_plus_zero_sum_noise(self) -> None:
        beta = _beta()
        out = ppsc_apply(PpscMechanism("ideal", 0.0), beta, seed=0).beta_sharp
        assert np.allclose(out, beta.mean(axis=0))
        noisy = ppsc_apply(PpscMechanism("ideal", 1.0), beta, seed=0).beta_sharp
        assert np.allclose(noisy.sum(axis=0), beta.sum(axis=0), atol=1e-12)

    def test_identity(self) -> None:
        beta = _beta()
        result = ppsc_apply(PpscMechanism("identity"), beta, seed=0)
        assert np.array_equal(result.beta_sharp, beta)
        assert len(result.log) == 0

    def test_deterministic_given_seed(self) -> None:
        mech = PpscMechanism("edge_mask", 1.0, star_graph())
        a = mech.apply(_beta(), 11).beta_sharp
        b = mech.apply(_beta(), 11).beta_sharp
        assert np.array_equal(a, b)

    def test_scalar_values(self) -> None:
        out = ppsc_apply(PpscMechanism("edge_mask", 1.0, star_graph()), np.arange(4.0), seed=0)
        assert out.beta_sharp.shape == (4, 1)

    def test_non_finite_rejected(self) -> None:
        with pytest.raises(MechanismError, match="finite"):
            ppsc_apply(PpscMechanism("identity"), np.array([1.0, np.nan]), seed=0)

    def test_row_count_mismatch(self) -> None:
        with pytest.raises(MechanismError, match="4 nodes"):
            ppsc_apply(PpscMechanism("edge_mask", 1.0, star_graph()), np.ones((3, 2)), seed=0)


class TestPropertyChecks:
    @pytest.mark.parametrize("kind", ["edge_mask", "ideal"])
    def test_sum_consistency(self, kind: str) -> None:
        mech = PpscMechanism(kind, 10.0, star_graph() if kind == "edge_mask" else None)
        report = check_sum_consistency(mech, _beta(), 1000, seed=0)
        assert report.ok
        assert report.trials == 1000

    def test_sum_drift_is_reported(self) -> None:
        report = check_sum_consistency(_DriftingMechanism(), _beta(), 10, seed=0)
        assert not report.ok
        assert report.max_rel_error > 1e-3

    def test_ideal_output_depends_only_on_sum(self) -> None:
        beta = _beta()
        mech = PpscMechanism("ideal", 1.0)
        for seed in range(20):
            a = mech.apply(beta, seed).beta_sharp
            b = mech.apply(_same_sum(beta, seed + 100), seed).beta_sharp
            assert np.allclose(a, b, rtol=0.0, atol=1e-12)

    def test_sum_consistency_needs_trials(self) -> None:
        with pytest.raises(MechanismError, match="At least one trial"):
            check_sum_consistency(PpscMechanism("identity"), _beta(), 0, seed=0)

    def test_compliance_flags_non_edge(self) -> None:
        log = MessageLog()
        log.add(1, 2, 0, np.zeros(2))
        assert not check_graph_compliance(log, star_graph())

    def test_edge_mask_is_distinguishable(self) -> None:
        beta = _beta()
        report = empirical_identifiability(
            PpscMechanism("edge_mask", 1.0, star_graph()), beta, _same_sum(beta), 2000, seed=0
        )
        assert report.distinguishable

    def test_ideal_is_not_distinguishable(self) -> None:
        beta = _beta()
        report = empirical_identifiability(PpscMechanism("ideal", 1.0), beta, _same_sum(beta), 2000, seed=0)
        assert not report.distinguishable

    def test_noiseless_ideal_is_not_distinguishable(self) -> None:
        beta = _beta()
        report = empirical_identifiability(PpscMechanism("ideal", 0.0), beta, _same_sum(beta), 100, seed=0)
        assert not report.distinguishable

    def test_different_sums_rejected(self) -> None:
        with pytest.raises(MechanismError, match="same sum"):
            empirical_identifiability(PpscMechanism("identity"), _beta(), _beta() + 1.0, 100, seed=0)

    def test_too_few_samples(self) -> None:
        beta = _beta()
        with pytest.raises(MechanismError, match="100 samples"):
            empirical_identifiability(PpscMechanism("identity"), beta, beta, 10, seed=0)
