"""Tests for the domain types and per-individual densities."""

import numpy as np
import pytest

from diffusion_trim.errors import InconsistentDataError, InputError
from diffusion_trim.model import (
    InfoScenario,
    Kind,
    OutcomeMatrix,
    ParamPoint,
    PIIContribution,
    PIIState,
    SeedVector,
    VillageNetwork,
    classify,
    equivalence_curve,
    first_outcome_density,
    info_density,
    outcome_density,
    reception_probabilities,
    trim_threshold,
)

from conftest import build_village


class TestVillageNetwork:
    def test_path_graph_from_edges(self):
        net = VillageNetwork.from_edges(3, [(0, 1), (1, 2)])
        assert net.n == 3
        assert list(net.neighbors(1)) == [0, 2]
        assert list(net.degree()) == [1, 2, 1]

    def test_asymmetric_matrix_names_first_pair(self):
        adj = np.array([[0, 1, 0], [0, 0, 1], [0, 1, 0]])
        with pytest.raises(InputError, match=r"g\[1,2\] != g\[2,1\]"):
            VillageNetwork(adj)

    def test_nonzero_diagonal_rejected(self):
        with pytest.raises(InputError, match="diagonal"):
            VillageNetwork(np.array([[1, 0], [0, 0]]))

    def test_non_binary_rejected(self):
        with pytest.raises(InputError):
            VillageNetwork(np.array([[0, 2], [2, 0]]))

    def test_informed_neighbor_counts(self, toy_network):
        status = np.array([1, 0, 0, 1, 0, 0], dtype=bool)
        assert list(toy_network.informed_neighbor_counts(status)) == [0, 2, 2, 0, 0, 1]

    def test_distances(self, toy_network):
        assert list(toy_network.distances_from([0])) == [0, 1, 1, 2, 2, 3]

    def test_unreachable_distance_is_inf(self):
        net = VillageNetwork.from_edges(3, [(0, 1)])
        assert np.isinf(net.distances_from([0])[2])


class TestOutcomesAndSeeds:
    def test_seed_vector_needs_an_ip(self):
        with pytest.raises(InputError):
            SeedVector(np.zeros(3))

    def test_outcome_rows_are_absorbing(self):
        with pytest.raises(InconsistentDataError) as info:
            OutcomeMatrix(np.array([[0, 0], [1, 0]]))
        assert info.value.individual == 2
        assert info.value.period == 2

    def test_scenario_cannot_forget(self):
        with pytest.raises(InputError):
            InfoScenario(np.array([[1, 0]]))

    def test_period_one_participation_needs_ip(self):
        with pytest.raises(InconsistentDataError) as info:
            build_village(2, [(0, 1)], [0], [[0, 0], [1, 1]])
        assert info.value.individual == 2
        assert info.value.period == 1

    def test_participation_beyond_reach(self):
        with pytest.raises(InconsistentDataError) as info:
            build_village(3, [(0, 1), (1, 2)], [0], [[0, 0], [0, 0], [0, 1]])
        assert info.value.individual == 3
        assert info.value.period == 2

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            build_village(2, [(0, 1)], [0], np.zeros((3, 2)))

    def test_param_point_range(self):
        with pytest.raises(InputError):
            ParamPoint(1.2, 0.5)


class TestDensities:
    def test_reception_probability(self):
        net = VillageNetwork.from_edges(3, [(0, 2), (1, 2)])
        r = reception_probabilities(net, [1, 1, 0], 0.5)
        assert r.r[2] == pytest.approx(0.75)
        assert r.r[0] == 0.0

    def test_first_outcome_density(self):
        assert first_outcome_density(1, 1, 0.3) == pytest.approx(0.3)
        assert first_outcome_density(0, 1, 0.3) == pytest.approx(0.7)
        assert first_outcome_density(0, 0, 0.3) == pytest.approx(1.0)
        assert first_outcome_density(1, 0, 0.3) == pytest.approx(0.0)

    def test_outcome_density_newly_informed(self):
        assert outcome_density(1, 0, 1, 0, 0.4) == pytest.approx(0.4)
        assert outcome_density(0, 0, 1, 0, 0.4) == pytest.approx(0.6)
        # informed earlier and opted out: decision already taken
        assert outcome_density(1, 0, 1, 1, 0.4) == pytest.approx(0.0)
        assert outcome_density(1, 1, 1, 1, 0.4) == pytest.approx(1.0)

    def test_info_density(self):
        assert info_density(1, 0, 0.3, 0) == pytest.approx(0.3)
        assert info_density(0, 0, 0.3, 0) == pytest.approx(0.7)
        assert info_density(1, 1, 0.3, 0) == pytest.approx(1.0)
        assert info_density(0, 1, 0.3, 0) == pytest.approx(0.0)
        assert info_density(0, 0, 0.3, 1) == pytest.approx(0.0)

    def test_pii_contributions_sum(self):
        c = PIIContribution.from_reception(0.6, 0.4)
        assert c.a == pytest.approx(0.36)
        assert c.b == pytest.approx(0.4)
        assert c.total == pytest.approx(1 - 0.4 * 0.6)

    def test_threshold_balances_a_and_b(self):
        p = 0.3
        r = trim_threshold(p)
        c = PIIContribution.from_reception(r, p)
        assert c.a == pytest.approx(c.b)

    def test_equivalence_curve(self):
        assert equivalence_curve(1, 0.5) == pytest.approx(0.0)
        assert equivalence_curve(2, 0.5) == pytest.approx(2 - 1 / 0.75)
        with pytest.raises(InputError):
            equivalence_curve(0, 0.5)


class TestClassify:
    def test_groups(self):
        y = OutcomeMatrix(np.array([[1, 1], [0, 1], [0, 0], [0, 0], [0, 0]]))
        r = np.array([0.0, 0.5, 0.5, 0.0, 0.5])
        informed = np.array([1, 0, 0, 0, 1], dtype=bool)
        classes = classify(y, 2, r, informed)
        assert [c.kind for c in classes] == [Kind.FORMER_PARTICIPANT, Kind.NEW_PARTICIPANT, Kind.PII,
                                             Kind.OUT_OF_REACH, Kind.PII]
        assert classes[2].pii_state is PIIState.FREE
        assert classes[4].pii_state is PIIState.PREV_INFORMED

    def test_unreachable_new_participant(self):
        y = OutcomeMatrix(np.array([[0, 1]]))
        with pytest.raises(InconsistentDataError):
            classify(y, 2, np.array([0.0]), np.array([False]))

    def test_period_range(self):
        y = OutcomeMatrix(np.zeros((1, 2)))
        with pytest.raises(InputError):
            classify(y, 1, np.array([0.0]), np.array([False]))
