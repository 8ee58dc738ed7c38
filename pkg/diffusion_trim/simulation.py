"""
Synthetic adoption data under the diffusion model and the Monte Carlo study
comparing trimming estimates with the exact and two-period estimators.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import pandas as pd

from diffusion_trim import config
from diffusion_trim.errors import DiffusionError, InputError
from diffusion_trim.estimation import (
    TWO_PERIOD,
    EstimateRecord,
    Grid,
    estimate_sequence,
    resolve_dbars,
)
from diffusion_trim.model import InfoScenario, OutcomeMatrix, SeedVector, Village, VillageNetwork
from diffusion_trim.parallel import install_shared, run_indexed, shared

logger = logging.getLogger(__name__)

SURROGATE_KINDS = ("erdos-renyi", "watts-strogatz")

# Purpose tags keep the injection-point and data streams apart when seed ranges overlap
IP_STREAM = 0
DATA_STREAM = 1


def make_rng(*key: int) -> np.random.Generator:
    """Counter-based generator keyed by a tuple of integers; independent of draw order elsewhere."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


def ip_rng(master_seed: int, seed_S: int, village: int) -> np.random.Generator:
    return make_rng(master_seed, IP_STREAM, seed_S, village)


def data_rng(master_seed: int, seed_D: int, village: int) -> np.random.Generator:
    return make_rng(master_seed, DATA_STREAM, seed_D, village)


@dataclass
class MCConfig:
    """Monte Carlo study settings."""

    p0: float
    q0: float
    sources: List[VillageNetwork]
    source_names: Optional[List[str]] = None
    N: int = config.MC_SUBMATRIX_SIZE
    V: int = config.MC_VILLAGES
    R: int = config.MC_REPLICATIONS
    T: int = config.DEFAULT_PERIODS
    seeds_S: Optional[List[int]] = None
    seeds_D: Optional[List[int]] = None
    grid: Grid = field(default_factory=Grid.regular)
    levels: Tuple[float, ...] = config.DEFAULT_CONFIDENCE_LEVELS
    master_seed: int = config.DEFAULT_MASTER_SEED
    budget: Optional[int] = config.DEFAULT_SCENARIO_BUDGET

    def __post_init__(self):
        if self.seeds_S is None:
            self.seeds_S = list(range(config.MC_SEED_S_START, config.MC_SEED_S_START + self.R))
        if self.seeds_D is None:
            self.seeds_D = list(range(config.MC_SEED_D_START, config.MC_SEED_D_START + self.R))
        self.validate()

    def validate(self) -> None:
        if self.N < 1:
            raise InputError(f"submatrix size must be at least 1, got {self.N}")
        if self.V < 1 or self.R < 1:
            raise InputError(f"villages and replications must be positive, got V={self.V}, R={self.R}")
        if self.T < 2:
            raise InputError(f"at least 2 periods are needed, got {self.T}")
        if len(self.seeds_S) != self.R or len(self.seeds_D) != self.R:
            raise InputError(f"seed ranges must have R={self.R} entries, got "
                             f"{len(self.seeds_S)} and {len(self.seeds_D)}")
        for name in ("p0", "q0"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InputError(f"{name} must lie in [0, 1], got {value}")
        if not self.sources:
            raise InputError("at least one source network is needed")
        small = [k for k, net in enumerate(self.sources) if net.n < self.N]
        if small:
            raise InputError(f"source network {small[0] + 1} has fewer than N={self.N} nodes")


@dataclass
class ReplicationResult:
    replication: int
    seed_S: int
    seed_D: int
    submatrix_seeds: List[int] = field(default_factory=list)
    dbars: List[Optional[int]] = field(default_factory=list)
    records: List[EstimateRecord] = field(default_factory=list)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def trimming_records(self) -> List[EstimateRecord]:
        return [r for r in self.records if r.estimator != TWO_PERIOD]

    @property
    def baseline(self) -> Optional[EstimateRecord]:
        return next((r for r in self.records if r.estimator == TWO_PERIOD), None)

    @property
    def exact(self) -> Optional[EstimateRecord]:
        """Record at the largest trimming value, where trimming is inactive."""
        trimming = self.trimming_records
        return trimming[-1] if trimming else None

    def to_dict(self) -> dict:
        return {
            "replication": self.replication,
            "seed_S": self.seed_S,
            "seed_D": self.seed_D,
            "submatrix_seeds": self.submatrix_seeds,
            "dbars": self.dbars,
            "records": [r.to_dict() for r in self.records],
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ReplicationResult":
        return cls(
            replication=payload["replication"],
            seed_S=payload["seed_S"],
            seed_D=payload["seed_D"],
            submatrix_seeds=payload["submatrix_seeds"],
            dbars=payload["dbars"],
            records=[EstimateRecord.from_dict(r) for r in payload["records"]],
            error=payload["error"],
        )


def extract_submatrix(full: VillageNetwork, seed: int, N: int) -> VillageNetwork:
    """
    Principal N x N submatrix starting at row and column ``seed`` (1-based).
    """
    if N < 1:
        raise InputError(f"submatrix size must be at least 1, got {N}")
    if seed < 1 or seed + N - 1 > full.n:
        raise InputError(f"submatrix at seed {seed} of size {N} exceeds a {full.n}-node network")
    return full.submatrix(seed - 1, N)


def draw_ip(N: int, rng: np.random.Generator) -> SeedVector:
    """Single injection point drawn uniformly from N individuals."""
    if N < 1:
        raise InputError(f"N must be at least 1, got {N}")
    return SeedVector.from_indices(N, [int(rng.integers(N))])


def simulate_adoption(net: VillageNetwork, s0: SeedVector, p0: float, q0: float, T: int,
                      rng: np.random.Generator) -> Tuple[OutcomeMatrix, InfoScenario]:
    """
    Simulate T periods of participation and T-1 information exchanges.

    Each directed informed-to-uninformed link gets one uniform draw per
    exchange, in row-major order, and transmits when the draw is at most q0.
    Every newly informed individual draws once and participates in the
    following period when the draw is at most p0.

    Returns:
        The observed outcome matrix and the latent information scenario
    """
    if not (0.0 <= p0 <= 1.0 and 0.0 <= q0 <= 1.0):
        raise InputError(f"p0 and q0 must lie in [0, 1], got {p0}, {q0}")
    if T < 1:
        raise InputError(f"T must be at least 1, got {T}")
    if s0.n != net.n:
        raise InputError(f"seed vector has length {s0.n}, network has {net.n} nodes")
    n = net.n
    informed = s0.s0.copy()
    y = np.zeros((n, T), dtype=bool)
    s = np.zeros((n, T - 1), dtype=bool)

    ips = s0.ips
    y[ips, 0] = rng.random(ips.size) <= p0
    for t in range(1, T):
        links = np.argwhere(net.adjacency & informed[:, None] & ~informed[None, :])
        success = rng.random(len(links)) <= q0
        newly = np.zeros(n, dtype=bool)
        newly[links[success, 1]] = True
        newly_idx = np.flatnonzero(newly)
        informed = informed | newly
        s[:, t - 1] = informed
        y[:, t] = y[:, t - 1]
        y[newly_idx, t] = rng.random(newly_idx.size) <= p0
    return OutcomeMatrix(y.astype(np.uint8)), InfoScenario(s.astype(np.uint8))


def surrogate_network(kind: str, n: int, seed: int, density: float = 0.15,
                      neighbors: int = 4, rewire: float = 0.1) -> VillageNetwork:
    """Erdos-Renyi or Watts-Strogatz network standing in for observed village networks."""
    if kind == "erdos-renyi":
        graph = nx.gnp_random_graph(n, density, seed=seed)
    elif kind == "watts-strogatz":
        graph = nx.watts_strogatz_graph(n, min(neighbors, n - 1), rewire, seed=seed)
    else:
        raise InputError(f"unknown surrogate kind {kind!r}; choose from {', '.join(SURROGATE_KINDS)}")
    adjacency = nx.to_numpy_array(graph, nodelist=range(n), dtype=np.uint8)
    return VillageNetwork(adjacency)


def surrogate_networks(count: int, n: int, kind: str = "erdos-renyi",
                       seed: int = config.DEFAULT_MASTER_SEED, **params) -> Tuple[List[str], List[VillageNetwork]]:
    """``count`` labelled surrogate networks of size ``n``."""
    names = [f"surrogate-{kind}-{k + 1}" for k in range(count)]
    networks = [surrogate_network(kind, n, seed + k, **params) for k in range(count)]
    return names, networks


def submatrix_seed(seed_S: int, village: int, source_n: int, N: int) -> int:
    """Per-village start seed derived from the replication seed; always a valid 1-based seed."""
    return 1 + (seed_S - 1 + village) % (source_n - N + 1)


def build_replication_sample(cfg: MCConfig, replication: int) -> Tuple[List[Village], List[int], List[InfoScenario]]:
    """Simulated villages of one replication, with their submatrix seeds and latent scenarios."""
    seed_S, seed_D = cfg.seeds_S[replication], cfg.seeds_D[replication]
    villages, seeds, scenarios = [], [], []
    for v in range(cfg.V):
        source = cfg.sources[v % len(cfg.sources)]
        start = submatrix_seed(seed_S, v, source.n, cfg.N)
        net = extract_submatrix(source, start, cfg.N)
        s0 = draw_ip(cfg.N, ip_rng(cfg.master_seed, seed_S, v))
        y, s = simulate_adoption(net, s0, cfg.p0, cfg.q0, cfg.T, data_rng(cfg.master_seed, seed_D, v))
        villages.append(Village(f"r{replication + 1}-v{v + 1}", net, s0, y))
        seeds.append(start)
        scenarios.append(s)
    return villages, seeds, scenarios


def run_replication(replication: int) -> ReplicationResult:
    """Simulate and estimate one replication; failures are recorded, not raised."""
    cfg: MCConfig = shared("mc_config")
    result = ReplicationResult(replication, cfg.seeds_S[replication], cfg.seeds_D[replication])
    start = time.perf_counter()
    try:
        villages, result.submatrix_seeds, _ = build_replication_sample(cfg, replication)
        result.dbars = resolve_dbars(villages, cfg.budget)
        known = [d for d in result.dbars if d is not None]
        d_max = max(known) if known else 0
        result.records = estimate_sequence(villages, cfg.grid, list(range(d_max + 1)), cfg.levels,
                                           workers=1, dbars=result.dbars, budget=cfg.budget)
    except DiffusionError as exc:
        result.error = f"{type(exc).__name__}: {exc.message}"
        logger.warning("Replication %d failed: %s", replication + 1, result.error)
    logger.info("Replication %d/%d done in %.2fs", replication + 1, cfg.R, time.perf_counter() - start)
    return result


def run_monte_carlo(cfg: MCConfig, workers: int = config.DEFAULT_WORKERS) -> Tuple[List[ReplicationResult], pd.DataFrame]:
    """
    Run all replications and summarise them.

    Args:
        cfg: Monte Carlo settings
        workers: Worker processes; replications are the parallel unit

    Returns:
        Per-replication results in replication order and the summary table
    """
    cfg.validate()
    logger.info("Monte Carlo: R=%d, V=%d, N=%d, p0=%g, q0=%g on %d worker(s)",
                cfg.R, cfg.V, cfg.N, cfg.p0, cfg.q0, workers)
    results = run_indexed(run_replication, list(range(cfg.R)), workers,
                          initializer=install_shared, initkwargs={"mc_config": cfg}, label="replications")
    failed = sum(not r.ok for r in results)
    if failed:
        logger.warning("%d of %d replications failed", failed, cfg.R)
    dead_ends = sum(not record.ok for r in results for record in r.records)
    if dead_ends:
        logger.warning("%d trimmed estimate(s) hit a dead-end and are left out of their summary rows", dead_ends)
    return results, summarize(results)


def estimate_table(results: Sequence[ReplicationResult]) -> pd.DataFrame:
    """
    One row per (replication, estimator); trimming rows run d = 0..max d-bar of the study.

    A replication whose own maximal PII count is smaller repeats its exact
    estimate for the larger d, where trimming is inactive. Failed records
    get no row, so every estimator is summarised over its own successes.
    """
    ok = [r for r in results if r.ok and r.trimming_records]
    d_top = max((len(r.trimming_records) - 1 for r in ok), default=-1)
    rows = []
    for result in ok:
        trimming, exact = result.trimming_records, result.exact
        if not exact.ok:
            exact = None
        for d in range(d_top + 1):
            record = trimming[min(d, len(trimming) - 1)]
            if record.ok:
                rows.append(_row(result, f"d={d}", d, record, exact))
        if exact is not None:
            rows.append(_row(result, "exact", None, exact, exact))
        if result.baseline is not None and result.baseline.ok:
            rows.append(_row(result, TWO_PERIOD, None, result.baseline, exact))
    return pd.DataFrame(rows, columns=["replication", "estimator", "d", "p_hat", "q_hat", "gap_p", "gap_q"])


def _row(result: ReplicationResult, label: str, d: Optional[int], record: EstimateRecord,
         exact: Optional[EstimateRecord]) -> Dict:
    return {
        "replication": result.replication + 1,
        "estimator": label,
        "d": d,
        "p_hat": record.p_hat,
        "q_hat": record.q_hat,
        "gap_p": abs(record.p_hat - exact.p_hat) if exact is not None else np.nan,
        "gap_q": abs(record.q_hat - exact.q_hat) if exact is not None else np.nan,
    }


def summarize(results: Sequence[ReplicationResult]) -> pd.DataFrame:
    """
    Per estimator: number of estimates, mean, empirical standard error
    (R - 1 denominator), first and third quartiles, and mean gap to the
    exact estimate.
    """
    table = estimate_table(results)
    columns = ["estimator", "count", "mean_p", "se_p", "q1_p", "q3_p", "mean_q", "se_q", "q1_q", "q3_q",
               "mean_gap_p", "mean_gap_q"]
    if table.empty:
        return pd.DataFrame(columns=columns)
    grouped = table.groupby("estimator", sort=False)
    summary = pd.DataFrame({
        "count": grouped["p_hat"].count(),
        "mean_p": grouped["p_hat"].mean(),
        "se_p": grouped["p_hat"].std(ddof=1),
        "q1_p": grouped["p_hat"].quantile(0.25),
        "q3_p": grouped["p_hat"].quantile(0.75),
        "mean_q": grouped["q_hat"].mean(),
        "se_q": grouped["q_hat"].std(ddof=1),
        "q1_q": grouped["q_hat"].quantile(0.25),
        "q3_q": grouped["q_hat"].quantile(0.75),
        "mean_gap_p": grouped["gap_p"].mean(),
        "mean_gap_q": grouped["gap_q"].mean(),
    })
    # d ascending, then exact and two-period, whatever replication reported first
    trimmed = sorted(int(d) for d in table["d"].dropna().unique())
    order = [f"d={d}" for d in trimmed] + ["exact", TWO_PERIOD]
    summary = summary.reindex([label for label in order if label in summary.index])
    summary.index.name = "estimator"
    return summary.reset_index()[columns]
