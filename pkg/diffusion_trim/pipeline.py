"""
Main pipeline class that orchestrates loading, estimation, simulation and
diagnostics for the command-line front end.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import pandas as pd

from diffusion_trim import config
from diffusion_trim.diagnostics import (
    convexity_report,
    error_bound,
    error_curve,
    interpolated_error_estimate,
    mistake_audit,
    slope_identity_check,
)
from diffusion_trim.errors import InputError
from diffusion_trim.estimation import (
    TWO_PERIOD,
    EstimateRecord,
    Grid,
    estimate_or_failure,
    estimate_sequence,
    grid_search_two_period,
    resolve_dbars,
    sample_surfaces,
)
from diffusion_trim.model import ParamPoint, SeedVector, Village, VillageNetwork
from diffusion_trim.network_loader import VillageLoader, load_network
from diffusion_trim.results_store import ResultsStore
from diffusion_trim.scenarios import count_scenarios
from diffusion_trim.simulation import MCConfig, build_replication_sample, run_monte_carlo, surrogate_networks

logger = logging.getLogger(__name__)

COMMANDS = ("simulate", "estimate", "mc", "errcurve", "audit", "count-scenarios")


@dataclass
class RunConfig:
    """Validated settings of one command-line run."""

    command: str
    villages_dir: str = config.VILLAGES_DIR
    manifest: Optional[str] = None
    villages: Optional[List[str]] = None
    network: Optional[str] = None
    ips: Optional[List[int]] = None  # 1-based
    periods: Optional[int] = None
    exchanges: int = config.DEFAULT_PERIODS - 1
    grid_min: float = config.DEFAULT_GRID_MIN
    grid_max: float = config.DEFAULT_GRID_MAX
    grid_step: float = config.DEFAULT_GRID_STEP
    p_min: Optional[float] = None  # per-axis overrides of grid_min/max/step
    p_max: Optional[float] = None
    p_step: Optional[float] = None
    q_min: Optional[float] = None
    q_max: Optional[float] = None
    q_step: Optional[float] = None
    p_values: Optional[List[float]] = None
    q_values: Optional[List[float]] = None
    d_values: List[Optional[int]] = field(default_factory=lambda: [None])
    all_d: bool = False  # d = 0..max d-bar of the sample
    levels: Tuple[float, ...] = config.DEFAULT_CONFIDENCE_LEVELS
    workers: int = config.DEFAULT_WORKERS
    master_seed: int = config.DEFAULT_MASTER_SEED
    output_dir: str = config.OUTPUT_DIR
    budget: int = config.DEFAULT_SCENARIO_BUDGET
    p: Optional[float] = None
    q: Optional[float] = None
    case: Optional[str] = None
    submatrix_size: int = config.MC_SUBMATRIX_SIZE
    n_villages: int = config.MC_VILLAGES
    replications: int = config.MC_REPLICATIONS
    seed_s_start: int = config.MC_SEED_S_START
    seed_d_start: int = config.MC_SEED_D_START
    sources: Optional[List[str]] = None
    surrogate: str = "erdos-renyi"
    surrogate_size: int = 40

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise InputError(f"unknown command {self.command!r}")
        if self.workers < 1:
            raise InputError(f"workers must be at least 1, got {self.workers}")
        if self.budget < 1:
            raise InputError(f"budget must be positive, got {self.budget}")
        if self.periods is not None and self.periods < 2:
            raise InputError(f"periods must be at least 2, got {self.periods}")
        if any(d is not None and d < 0 for d in self.d_values):
            raise InputError("trimming values must be non-negative")
        for level in self.levels:
            if not 0.0 < level < 1.0:
                raise InputError(f"confidence level must lie in (0, 1), got {level}")
        if self.case is not None and self.case not in config.MC_CASES:
            raise InputError(f"unknown case {self.case!r}; choose from {', '.join(config.MC_CASES)}")
        if self.command in ("errcurve", "audit") and (self.p is None or self.q is None):
            raise InputError(f"{self.command} needs --p and --q")
        if self.command in ("simulate", "mc") and self.case is None and (self.p is None or self.q is None):
            raise InputError(f"{self.command} needs --case or both --p and --q")
        if self.command == "count-scenarios":
            if self.network is None or not self.ips:
                raise InputError("count-scenarios needs --network and --ips")
            if self.exchanges < 0:
                raise InputError(f"exchanges must be non-negative, got {self.exchanges}")
        if self.command in ("simulate", "mc"):
            for name in ("submatrix_size", "n_villages", "replications", "surrogate_size"):
                if getattr(self, name) < 1:
                    raise InputError(f"{name} must be positive, got {getattr(self, name)}")
        self.grid()
        return self

    def _axis(self, prefix: str) -> Tuple[float, float, float]:
        shared_axis = (self.grid_min, self.grid_max, self.grid_step)
        own = (getattr(self, f"{prefix}_min"), getattr(self, f"{prefix}_max"), getattr(self, f"{prefix}_step"))
        return tuple(value if value is not None else default for value, default in zip(own, shared_axis))

    def grid(self) -> Grid:
        base = Grid.from_axes(self._axis("p"), self._axis("q"))
        if self.p_values is None and self.q_values is None:
            return base
        return Grid(self.p_values if self.p_values is not None else base.p_values,
                    self.q_values if self.q_values is not None else base.q_values)

    @property
    def true_params(self) -> Tuple[float, float]:
        if self.case is not None:
            return config.MC_CASES[self.case]
        return (self.p, self.q)

    @property
    def params(self) -> ParamPoint:
        return ParamPoint(self.p, self.q)

    @property
    def trimming_values(self) -> List[Optional[int]]:
        return list(self.d_values) if self.d_values else [None]


def _d_label(d: Optional[int]) -> str:
    return "exact" if d is None else f"d{d}"


class DiffusionPipeline:
    """
    Drives the estimator and its diagnostics from a RunConfig, writing every
    artifact through a ResultsStore.
    """

    def __init__(self, run_config: RunConfig):
        self.config = run_config.validate()
        self.loader = VillageLoader(run_config.villages_dir)
        self.store = ResultsStore(run_config.output_dir)

    def run(self):
        handlers = {
            "simulate": self.simulate,
            "estimate": self.estimate,
            "mc": self.monte_carlo,
            "errcurve": self.error_curves,
            "audit": self.audit,
            "count-scenarios": self.count_scenarios,
        }
        start = time.perf_counter()
        result = handlers[self.config.command]()
        logger.info("%s finished in %.2fs", self.config.command, time.perf_counter() - start)
        return result

    def load_villages(self) -> List[Village]:
        return self.loader.load_villages(self.config.manifest, self.config.periods, self.config.villages)

    def _sources(self) -> Tuple[List[str], List[VillageNetwork]]:
        cfg = self.config
        if cfg.sources:
            return list(cfg.sources), [load_network(path) for path in cfg.sources]
        size = max(cfg.surrogate_size, cfg.submatrix_size)
        logger.info("Using %s surrogate source networks of %d nodes", cfg.surrogate, size)
        return surrogate_networks(cfg.n_villages, size, cfg.surrogate, cfg.master_seed)

    def _mc_config(self, replications: int) -> MCConfig:
        cfg = self.config
        p0, q0 = cfg.true_params
        names, sources = self._sources()
        return MCConfig(
            p0=p0, q0=q0, sources=sources, source_names=names,
            N=cfg.submatrix_size, V=cfg.n_villages, R=replications,
            T=cfg.periods or config.DEFAULT_PERIODS,
            seeds_S=list(range(cfg.seed_s_start, cfg.seed_s_start + replications)),
            seeds_D=list(range(cfg.seed_d_start, cfg.seed_d_start + replications)),
            grid=cfg.grid(), levels=tuple(cfg.levels), master_seed=cfg.master_seed, budget=cfg.budget,
        )

    def simulate(self) -> List[Dict[str, str]]:
        """Simulate one sample of villages and write them with their latent scenarios."""
        mc = self._mc_config(1)
        villages, _, scenarios = build_replication_sample(mc, 0)
        entries = [self.store.save_village(v, s) for v, s in zip(villages, scenarios)]
        self.store.save_manifest(entries)
        return entries

    def estimate(self) -> List[EstimateRecord]:
        """Surfaces and estimate records for every requested trimming value plus the baseline."""
        cfg = self.config
        if cfg.all_d:
            return self.estimate_all()
        villages = self.load_villages()
        grid = cfg.grid()
        dbars = resolve_dbars(villages, cfg.budget)
        surfaces = sample_surfaces(villages, grid, cfg.trimming_values, cfg.workers, dbars, cfg.budget)
        records = []
        for d in cfg.trimming_values:
            surface = surfaces[d]
            self.store.save_surface(surface, f"surface_{_d_label(d)}.csv")
            record = estimate_or_failure(surface, cfg.levels, villages)
            records.append(record)
            if record.ok:
                logger.info("%s: p=%g q=%g boundary=%s", record.label, record.p_hat, record.q_hat, record.boundary)
        surface, baseline = grid_search_two_period(villages, grid, cfg.levels, cfg.workers)
        self.store.save_surface(surface, f"surface_{TWO_PERIOD}.csv")
        records.append(baseline)
        self.store.save_estimates(records)
        self.store.save_estimate_table(records)
        return records

    def estimate_all(self) -> List[EstimateRecord]:
        """Estimate sequence for d = 0..max d-bar of the sample."""
        cfg = self.config
        villages = self.load_villages()
        dbars = resolve_dbars(villages, cfg.budget)
        top = max((d for d in dbars if d is not None), default=0)
        surfaces: Dict = {}
        records = estimate_sequence(villages, cfg.grid(), list(range(top + 1)), cfg.levels, cfg.workers,
                                    dbars, cfg.budget, surfaces)
        for key, surface in surfaces.items():
            self.store.save_surface(surface, f"surface_{key if key == TWO_PERIOD else _d_label(key)}.csv")
        self.store.save_estimates(records)
        self.store.save_estimate_table(records)
        return records

    def monte_carlo(self) -> pd.DataFrame:
        cfg = self.config
        results, summary = run_monte_carlo(self._mc_config(cfg.replications), cfg.workers)
        self.store.save_results(results)
        self.store.save_table(summary, "summary.csv")
        print(summary.to_string(index=False))
        return summary

    def error_curves(self) -> pd.DataFrame:
        """Error curve, slope identity and convexity per village at one grid point."""
        cfg = self.config
        d_max = max((d for d in cfg.trimming_values if d is not None), default=None)
        rows = []
        for village in self.load_villages():
            curve = error_curve(village, cfg.params, d_max, cfg.budget)
            self.store.save_curve(curve, f"errcurve_{village.name}.csv")
            slope = slope_identity_check(curve)
            convexity = convexity_report(curve)
            row = {"village": village.name, "dbar": curve.dbar, "epsilon_0": float(curve.epsilons[0]),
                   "slope_discrepancy": slope.max_discrepancy, "convex": convexity.convex,
                   "kinks": " ".join(str(d) for d in convexity.kinks)}
            if len(curve.log_retained) >= 2 and curve.dbar >= 1:
                interpolated = interpolated_error_estimate(curve.log_retained, curve.dbar)
                row.update(interpolated_epsilon_0=interpolated.estimate, curvature=interpolated.curvature,
                           conservative=interpolated.conservative)
            rows.append(row)
        table = pd.DataFrame(rows)
        self.store.save_table(table, "errcurve_summary.csv")
        return table

    def audit(self) -> pd.DataFrame:
        """Mistake audit and error bound per village at one grid point and trimming value."""
        cfg = self.config
        d = next((d for d in cfg.trimming_values if d is not None), 0)
        rows = []
        for village in self.load_villages():
            if village.periods < 3:
                logger.warning("Village %s has %d periods; the first exchange never branches, audit skipped",
                               village.name, village.periods)
                audits, bound = None, None
            else:
                audits = mistake_audit(village, cfg.params, d, cfg.budget)
                self.store.save_audits(audits, f"audit_{village.name}.csv")
                bound = error_bound(village, cfg.params, d, cfg.budget)
            rows.append({
                "village": village.name,
                "trimmed": len(audits) if audits is not None else None,
                "mistakes": sum(a.verdict.value != "optimal" for a in audits) if audits is not None else None,
                "epsilon_first_exchange": bound.epsilon if bound else None,
                "epsilon_bound": bound.epsilon_bound if bound else None,
                "bound_holds": bound.holds if bound else None,
                "selection_holds": bound.selection_holds if bound else None,
            })
        table = pd.DataFrame(rows)
        self.store.save_table(table, "audit_summary.csv")
        return table

    def count_scenarios(self) -> int:
        cfg = self.config
        network = load_network(cfg.network)
        ips = [i - 1 for i in cfg.ips]
        if any(not 0 <= i < network.n for i in ips):
            raise InputError(f"injection points must lie in 1..{network.n}")
        count = count_scenarios(network, SeedVector.from_indices(network.n, ips), cfg.exchanges)
        print(count)
        return count
