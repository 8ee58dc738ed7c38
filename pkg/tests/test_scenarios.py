"""Tests for the depth-first likelihood engine, trimming and scenario enumeration."""

import itertools

import numpy as np
import pytest

from diffusion_trim.errors import BudgetExceededError, InconsistentDataError, InputError
from diffusion_trim.model import InfoScenario, OutcomeMatrix, ParamPoint, PIIContribution, SeedVector, Village, \
    VillageNetwork, trim_threshold
from diffusion_trim.scenarios import (
    EligiblePII,
    assign_exchange,
    brute_force_log_likelihood,
    check_budget,
    count_scenarios,
    eligible_piis,
    enumerate_scenarios,
    evaluate_village,
    expand_exchange,
    initial_state,
    max_pii_count,
    scenario_probability,
    trim_select,
    village_log_likelihood,
)
from diffusion_trim.simulation import make_rng

from conftest import TOY_EDGES, quiet_village, simulated_village

REL = 1e-10

PARAM_POINTS = [ParamPoint(0.5, 0.5), ParamPoint(0.2, 0.7), ParamPoint(0.8, 0.1), ParamPoint(0.35, 0.9)]


def _pii(individual, r, p=0.5):
    return EligiblePII(individual, r, PIIContribution.from_reception(r, p))


class TestScenarioCount:
    def test_toy_network_three_exchanges(self, toy_network):
        assert count_scenarios(toy_network, SeedVector.from_indices(6, [0]), 3) == 92

    def test_enumeration_matches_count(self, toy_network):
        seeds = SeedVector.from_indices(6, [0])
        scenarios = list(enumerate_scenarios(toy_network, seeds, 3))
        assert len(scenarios) == 92
        assert len({s.s.tobytes() for s in scenarios}) == 92

    def test_zero_exchanges(self, toy_network):
        assert count_scenarios(toy_network, SeedVector.from_indices(6, [0]), 0) == 1

    def test_limit_stops_early(self, toy_network):
        count = count_scenarios(toy_network, SeedVector.from_indices(6, [0]), 3, limit=10)
        assert 10 < count <= 92

    def test_budget_refusal(self, toy_village):
        with pytest.raises(BudgetExceededError) as info:
            check_budget(toy_village, budget=1)
        assert info.value.exit_code == 3
        assert info.value.village == "toy-village-1"

    def test_budget_within_limit(self, toy_village):
        assert check_budget(toy_village, budget=10_000) >= 1


class TestTrimSelect:
    def test_furthest_from_threshold_trimmed_first(self):
        params = ParamPoint(0.5, 0.5)
        threshold = trim_threshold(0.5)
        piis = [_pii(0, 0.75), _pii(1, 0.5), _pii(2, 0.9375), _pii(3, threshold)]
        plan = trim_select(piis, params, 1)
        assert plan.free == (3,)
        assert plan.to_a == (0, 2)
        assert plan.to_b == (1,)

    def test_threshold_goes_to_b(self):
        params = ParamPoint(0.5, 0.5)
        plan = trim_select([_pii(4, trim_threshold(0.5))], params, 0)
        assert plan.to_b == (4,)
        assert plan.to_a == ()

    def test_ties_trim_lower_index_first(self):
        params = ParamPoint(0.5, 0.5)
        plan = trim_select([_pii(3, 0.5), _pii(1, 0.5)], params, 1)
        assert plan.free == (3,)
        assert plan.trimmed == (1,)

    def test_unbounded_keeps_everything_free(self):
        plan = trim_select([_pii(0, 0.1), _pii(1, 0.9)], ParamPoint(0.5, 0.5), None)
        assert plan.free == (0, 1)
        assert plan.trimmed == ()

    def test_negative_d_rejected(self):
        with pytest.raises(InputError):
            trim_select([], ParamPoint(0.5, 0.5), -1)

    def test_equidistant_neighbours_of_the_ip(self):
        village = quiet_village(7, [(0, 1), (0, 2), (0, 3), (0, 4), (1, 5), (2, 5), (3, 6)], [0], 4)
        params = ParamPoint(0.5, 0.5)
        root = initial_state(village, params)
        piis = eligible_piis(root, village, params)
        assert [e.individual for e in piis] == [1, 2, 3, 4]
        plan = trim_select(piis, params, 2)
        assert plan.free == (3, 4)
        assert plan.to_b == (1, 2)


class TestExpansion:
    def test_one_child_per_free_subset(self, star_village):
        params = ParamPoint(0.5, 0.5)
        root = initial_state(star_village, params)
        plan = trim_select(eligible_piis(root, star_village, params), params, None)
        assert len(expand_exchange(root, plan, star_village, params)) == 16

    def test_trimmed_piis_take_default(self, star_village):
        params = ParamPoint(0.5, 0.5)
        root = initial_state(star_village, params)
        plan = trim_select(eligible_piis(root, star_village, params), params, 0)
        (child,) = expand_exchange(root, plan, star_village, params)
        # r = 0.5 lies below the threshold, so every leaf stays uninformed
        assert not child.informed[1:].any()
        assert child.log_prob == pytest.approx(np.log(0.5) + 4 * np.log(0.5))

    def test_no_exchange_after_the_last_period(self, star_village):
        params = ParamPoint(0.5, 0.5)
        village = star_village.truncated(2)
        root = initial_state(village, params)
        assert len(eligible_piis(root, village, params)) == 4
        last = assign_exchange(root, village, params, [])
        assert last.t == 1
        with pytest.raises(InputError):
            eligible_piis(last, village, params)


class TestExactLikelihood:
    @pytest.mark.parametrize("seed", range(50))
    def test_matches_brute_force(self, seed):
        periods = 3 if seed % 2 else 4
        village, _ = simulated_village(seed, n_max=7, periods=periods)
        params = PARAM_POINTS[seed % len(PARAM_POINTS)]
        exact = village_log_likelihood(village, params)
        oracle = brute_force_log_likelihood(village, params)
        assert exact == pytest.approx(oracle, rel=REL)

    def test_single_pii_closed_form(self):
        village = quiet_village(2, [(0, 1)], [0], 3)
        p, q = 0.5, 0.5
        expected = (1 - p) * (q * (1 - p) + (1 - q) * (1 - p * q))
        assert village_log_likelihood(village, ParamPoint(p, q)) == pytest.approx(np.log(expected), rel=REL)

    def test_two_periods(self):
        village = quiet_village(2, [(0, 1)], [0], 2)
        assert village_log_likelihood(village, ParamPoint(0.3, 0.6)) == pytest.approx(
            np.log(0.7 * (1 - 0.3 * 0.6)), rel=REL)

    def test_one_period_rejected(self):
        village = quiet_village(2, [(0, 1)], [0], 1)
        with pytest.raises(InputError):
            village_log_likelihood(village, ParamPoint(0.5, 0.5))

    def test_impossible_data_is_minus_infinity(self):
        # the injection point does not participate although p = 1
        village = quiet_village(2, [(0, 1)], [0], 3)
        assert village_log_likelihood(village, ParamPoint(1.0, 0.5)) == -np.inf

    @pytest.mark.parametrize("n, edges", [
        (4, [(0, 1), (1, 2), (1, 3), (2, 3)]),
        (5, [(0, 1), (1, 2), (2, 3), (3, 4), (1, 3)]),
        pytest.param(6, TOY_EDGES, marks=pytest.mark.slow),
    ])
    def test_probabilities_sum_to_one(self, n, edges):
        net = VillageNetwork.from_edges(n, edges)
        seeds = SeedVector.from_indices(n, [0])
        periods = 3
        points = make_rng(31, n).uniform(0.05, 0.95, size=(5, 2))
        # row i participates first in period first[i], never when 0
        matrices = [np.array([[1 if 0 < f <= t + 1 else 0 for t in range(periods)] for f in first])
                    for first in itertools.product(range(periods + 1), repeat=n)]
        villages = []
        for y in matrices:
            try:
                villages.append(Village("all", net, seeds, OutcomeMatrix(y)))
            except InconsistentDataError:
                continue
        for p, q in points:
            params = ParamPoint(float(p), float(q))
            total = sum(evaluate_village(village, params).likelihood for village in villages)
            assert total == pytest.approx(1.0, abs=1e-8)


class TestTrimmedLikelihood:
    @pytest.mark.parametrize("seed", range(12))
    def test_monotone_in_d_and_exact_at_dbar(self, seed):
        village, _ = simulated_village(100 + seed, n_max=7, periods=4)
        dbar = max_pii_count(village)
        for params in PARAM_POINTS:
            exact = village_log_likelihood(village, params)
            values = [village_log_likelihood(village, params, d) for d in range(dbar + 1)]
            for lower, upper in zip(values, values[1:]):
                assert lower <= upper + 1e-12
            assert values[-1] == pytest.approx(exact, abs=1e-12)
            assert values[-1] <= exact + 1e-12

    @pytest.mark.parametrize("seed", range(8))
    def test_branch_count_bound(self, seed):
        village, _ = simulated_village(200 + seed, n_max=7, periods=4)
        params = ParamPoint(0.4, 0.6)
        for d in range(3):
            result = evaluate_village(village, params, d)
            assert result.branches_by_depth.get(2, 0) <= 4 ** d

    def test_trimmed_never_exceeds_exact(self, toy_village):
        for params in PARAM_POINTS:
            exact = village_log_likelihood(toy_village, params)
            assert village_log_likelihood(toy_village, params, 0) <= exact + 1e-12

    def test_leaves_are_kept_in_traversal_order(self, toy_village):
        result = evaluate_village(toy_village, ParamPoint(0.5, 0.5), keep_leaves=True)
        assert len(result.leaf_keys) == len(result.leaf_log_masses)
        assert len(set(result.leaf_keys)) == len(result.leaf_keys)


class TestScenarioProbability:
    def test_unreachable_scenario_has_zero_probability(self):
        village = quiet_village(3, [(0, 1), (1, 2)], [0], 3)
        scenario = InfoScenario(np.array([[1, 1], [0, 0], [1, 1]], dtype=np.uint8))
        assert scenario_probability(village, ParamPoint(0.5, 0.5), scenario) == 0.0

    def test_simulated_scenario_is_possible(self):
        for seed in range(10):
            village, scenario = simulated_village(300 + seed)
            assert scenario_probability(village, ParamPoint(0.5, 0.5), scenario) > 0.0

    def test_exchange_count_must_match(self):
        village = quiet_village(2, [(0, 1)], [0], 3)
        with pytest.raises(InputError):
            scenario_probability(village, ParamPoint(0.5, 0.5), InfoScenario(np.zeros((2, 1), dtype=np.uint8)))


def test_toy_edges_are_symmetric():
    net = VillageNetwork.from_edges(6, TOY_EDGES)
    assert (net.adjacency == net.adjacency.T).all()
