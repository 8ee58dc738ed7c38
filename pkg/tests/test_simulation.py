"""Tests for data simulation, submatrix extraction and the Monte Carlo driver."""

import numpy as np
import pytest

from diffusion_trim.errors import InputError
from diffusion_trim.estimation import TWO_PERIOD, EstimateRecord, Grid
from diffusion_trim.model import ParamPoint, SeedVector, Village, VillageNetwork
from diffusion_trim.scenarios import scenario_probability
from diffusion_trim.simulation import (
    MCConfig,
    ReplicationResult,
    build_replication_sample,
    data_rng,
    draw_ip,
    extract_submatrix,
    ip_rng,
    make_rng,
    run_monte_carlo,
    simulate_adoption,
    submatrix_seed,
    summarize,
    surrogate_network,
    surrogate_networks,
)

from conftest import TOY_EDGES


def _path(n):
    return VillageNetwork.from_edges(n, [(k, k + 1) for k in range(n - 1)])


def _small_study(R=2, **overrides):
    _, sources = surrogate_networks(2, 9, seed=7)
    settings = dict(p0=0.5, q0=0.5, sources=sources, N=5, V=2, R=R, T=3,
                    grid=Grid.regular(0.1, 0.9, 0.4), master_seed=11, budget=100_000)
    settings.update(overrides)
    return MCConfig(**settings)


class TestSubmatrix:
    def test_rows_follow_the_seed(self):
        _, (source,) = surrogate_networks(1, 12, seed=3)
        sub = extract_submatrix(source, 4, 5)
        assert np.array_equal(sub.adjacency, source.adjacency[3:8, 3:8])

    def test_full_network(self, toy_network):
        assert np.array_equal(extract_submatrix(toy_network, 1, 6).adjacency, toy_network.adjacency)

    @pytest.mark.parametrize("seed", [0, 3])
    def test_out_of_range(self, toy_network, seed):
        with pytest.raises(InputError):
            extract_submatrix(toy_network, seed, 5)

    def test_seed_formula_stays_in_range(self):
        seeds = [submatrix_seed(s, v, 30, 20) for s in range(1, 40) for v in range(11)]
        assert min(seeds) == 1
        assert max(seeds) == 11

    def test_seed_formula(self):
        assert submatrix_seed(1, 0, 30, 20) == 1
        assert submatrix_seed(1, 10, 30, 20) == 11
        assert submatrix_seed(3, 10, 30, 20) == 2


class TestDrawIP:
    def test_single_ip(self):
        seeds = draw_ip(7, make_rng(1, 2, 3))
        assert seeds.s0.sum() == 1

    def test_same_key_same_draw(self):
        assert np.array_equal(draw_ip(50, make_rng(5, 1, 0)).s0, draw_ip(50, make_rng(5, 1, 0)).s0)

    def test_uniform(self):
        rng = make_rng(9)
        counts = np.zeros(4)
        for _ in range(4000):
            counts += draw_ip(4, rng).s0
        # 4 sigma of a binomial(4000, 1/4)
        assert np.abs(counts - 1000).max() < 4 * np.sqrt(4000 * 0.25 * 0.75)

    def test_size(self):
        with pytest.raises(InputError):
            draw_ip(0, make_rng(1))


class TestSimulateAdoption:
    def test_no_transmission_informs_only_ips(self, toy_network):
        s0 = SeedVector.from_indices(6, [0])
        y, s = simulate_adoption(toy_network, s0, 0.7, 0.0, 4, make_rng(1))
        assert not y.y[1:].any()
        assert np.array_equal(s.s.astype(bool), np.repeat(s0.s0[:, None], 3, axis=1))

    def test_certain_spread_follows_distance(self, toy_network):
        s0 = SeedVector.from_indices(6, [0])
        y, _ = simulate_adoption(toy_network, s0, 1.0, 1.0, 4, make_rng(2))
        dist = toy_network.distances_from([0])
        for t in range(4):
            assert np.array_equal(y.y[:, t], dist <= t)

    def test_shapes(self, toy_network):
        y, s = simulate_adoption(toy_network, SeedVector.from_indices(6, [2]), 0.5, 0.5, 5, make_rng(3))
        assert y.y.shape == (6, 5)
        assert s.s.shape == (6, 4)

    def test_deterministic(self, toy_network):
        s0 = SeedVector.from_indices(6, [0])
        first = simulate_adoption(toy_network, s0, 0.5, 0.5, 4, make_rng(4, 1))
        second = simulate_adoption(toy_network, s0, 0.5, 0.5, 4, make_rng(4, 1))
        assert np.array_equal(first[0].y, second[0].y)
        assert np.array_equal(first[1].s, second[1].s)

    @pytest.mark.parametrize("seed", range(20))
    def test_simulated_data_is_possible(self, seed):
        rng = make_rng(500, seed)
        net = _path(6) if seed % 2 else VillageNetwork.from_edges(6, TOY_EDGES)
        s0 = draw_ip(6, rng)
        y, s = simulate_adoption(net, s0, 0.4, 0.6, 4, rng)
        village = Village(f"sim-{seed}", net, s0, y)
        assert scenario_probability(village, ParamPoint(0.4, 0.6), s) > 0.0

    def test_invalid_probability(self, toy_network):
        with pytest.raises(InputError):
            simulate_adoption(toy_network, SeedVector.from_indices(6, [0]), 1.5, 0.5, 3, make_rng(1))

    @pytest.mark.slow
    def test_single_edge_frequency(self):
        net = _path(2)
        s0 = SeedVector.from_indices(2, [0])
        rng = make_rng(6)
        draws = 100_000
        hits = sum(int(simulate_adoption(net, s0, 0.5, 0.5, 2, rng)[0].y[1, 1]) for _ in range(draws))
        assert abs(hits / draws - 0.25) < 4 * np.sqrt(0.25 * 0.75 / draws)


class TestSurrogates:
    @pytest.mark.parametrize("kind", ["erdos-renyi", "watts-strogatz"])
    def test_deterministic_and_symmetric(self, kind):
        first = surrogate_network(kind, 15, 4)
        second = surrogate_network(kind, 15, 4)
        assert np.array_equal(first.adjacency, second.adjacency)
        assert np.array_equal(first.adjacency, first.adjacency.T)

    def test_unknown_kind(self):
        with pytest.raises(InputError):
            surrogate_network("barabasi", 10, 1)


class TestMonteCarlo:
    def test_sample_is_reproducible(self):
        cfg = _small_study()
        villages, seeds, _ = build_replication_sample(cfg, 0)
        again, seeds_again, _ = build_replication_sample(cfg, 0)
        assert seeds == seeds_again
        for a, b in zip(villages, again):
            assert np.array_equal(a.outcomes.y, b.outcomes.y)
            assert np.array_equal(a.seeds.s0, b.seeds.s0)

    def test_config_validation(self):
        with pytest.raises(InputError):
            _small_study(N=50)
        with pytest.raises(InputError):
            _small_study(seeds_S=[1])

    def test_small_study(self):
        results, summary = run_monte_carlo(_small_study(), workers=1)
        assert len(results) == 2
        assert all(r.ok for r in results)
        for result in results:
            assert result.baseline.estimator == TWO_PERIOD
            assert len(result.trimming_records) == max(result.dbars) + 1
        rows = summary.set_index("estimator")
        assert rows.loc["exact", "mean_gap_p"] == 0.0
        assert rows.loc["exact", "mean_gap_q"] == 0.0
        assert list(summary["estimator"])[-2:] == ["exact", TWO_PERIOD]
        assert (rows.loc[["exact", TWO_PERIOD], "count"] == 2).all()
        assert (summary["count"] <= 2).all()

    def test_workers_do_not_change_results(self):
        cfg = _small_study()
        serial, _ = run_monte_carlo(cfg, workers=1)
        pooled, _ = run_monte_carlo(cfg, workers=2)
        assert [r.to_dict() for r in serial] == [r.to_dict() for r in pooled]

    def test_failed_replications_are_left_out(self):
        results, _ = run_monte_carlo(_small_study(R=1), workers=1)
        failed = ReplicationResult(1, 2, 3, error="BudgetExceededError: too many")
        summary = summarize(results + [failed])
        assert (summary["count"] == 1).all()
        assert summary["se_p"].isna().all()

    def test_result_serialisation(self):
        results, _ = run_monte_carlo(_small_study(R=1), workers=1)
        restored = ReplicationResult.from_dict(results[0].to_dict())
        assert restored.to_dict() == results[0].to_dict()


class TestRandomStreams:
    @pytest.mark.parametrize("replication", [0, 1])
    def test_overlapping_seed_ranges_use_distinct_streams(self, replication):
        cfg = _small_study(R=3)
        assert cfg.seeds_S[replication + 1] == cfg.seeds_D[replication]
        ip_draws = ip_rng(cfg.master_seed, cfg.seeds_S[replication + 1], 0).bit_generator.random_raw(4)
        data_draws = data_rng(cfg.master_seed, cfg.seeds_D[replication], 0).bit_generator.random_raw(4)
        assert not np.array_equal(ip_draws, data_draws)

    def test_streams_are_keyed(self):
        first = ip_rng(5, 2, 0).bit_generator.random_raw(4)
        assert np.array_equal(first, ip_rng(5, 2, 0).bit_generator.random_raw(4))
        assert not np.array_equal(first, ip_rng(5, 2, 1).bit_generator.random_raw(4))


def _record(p, q, d, estimator="trimming"):
    return EstimateRecord(p, q, d, -1.0, estimator=estimator)


class TestSummary:
    def _results(self):
        return [
            ReplicationResult(0, 1, 2, records=[EstimateRecord.failed(0, "TrimmingDeadEndError: no branch"),
                                                _record(0.3, 0.5, 1), _record(0.5, 0.5, None, TWO_PERIOD)]),
            ReplicationResult(1, 2, 3, records=[_record(0.2, 0.4, 0), _record(0.4, 0.4, 1),
                                                _record(0.6, 0.4, None, TWO_PERIOD)]),
        ]

    def test_dead_end_only_drops_its_own_row(self):
        rows = summarize(self._results()).set_index("estimator")
        assert rows.loc["d=0", "count"] == 1
        assert rows.loc["d=1", "count"] == 2
        assert rows.loc["exact", "count"] == 2
        assert rows.loc[TWO_PERIOD, "count"] == 2
        assert rows.loc["d=0", "mean_gap_p"] == pytest.approx(0.2)

    def test_rows_are_ordered_by_d(self):
        summary = summarize(self._results())
        assert list(summary["estimator"]) == ["d=0", "d=1", "exact", TWO_PERIOD]

    def test_quartiles(self):
        rows = summarize(self._results()).set_index("estimator")
        assert rows.loc["exact", "q1_p"] == pytest.approx(0.325)
        assert rows.loc["exact", "q3_p"] == pytest.approx(0.375)
        assert rows.loc[TWO_PERIOD, "q1_q"] == pytest.approx(0.425)
        assert rows.loc[TWO_PERIOD, "q3_q"] == pytest.approx(0.475)

    def test_result_with_dead_end_round_trips(self):
        result = self._results()[0]
        assert ReplicationResult.from_dict(result.to_dict()).to_dict() == result.to_dict()


@pytest.mark.slow
def test_trimming_approaches_the_exact_estimator():
    _, sources = surrogate_networks(6, 24, seed=3)
    cfg = MCConfig(p0=0.5, q0=0.5, sources=sources, N=12, V=6, R=30, T=4,
                   grid=Grid.regular(0.05, 0.95, 0.1))
    results, summary = run_monte_carlo(cfg, workers=2)
    assert all(r.ok for r in results)
    rows = summary.set_index("estimator")
    trimming = sorted((label for label in summary["estimator"] if label.startswith("d=")), key=lambda s: int(s[2:]))
    gaps_p = rows.loc[trimming, "mean_gap_p"].to_numpy()
    gaps_q = rows.loc[trimming, "mean_gap_q"].to_numpy()
    assert (np.diff(gaps_p) <= 1e-12).all()
    assert (np.diff(gaps_q) <= 1e-12).all()
    assert gaps_p[-1] == 0.0 and gaps_q[-1] == 0.0
    assert rows.loc[TWO_PERIOD, "se_q"] > rows.loc["exact", "se_q"]
