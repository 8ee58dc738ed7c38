"""
Grid-search maximum likelihood, likelihood-ratio confidence sets and the
two-period baseline estimator.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import chi2

from diffusion_trim import config
from diffusion_trim.errors import BudgetExceededError, EstimationFailedError, InputError, TrimmingDeadEndError
from diffusion_trim.model import ParamPoint, Village, first_outcome_density, reception_from_counts
from diffusion_trim.parallel import install_shared, run_indexed, shared
from diffusion_trim.scenarios import check_budget, evaluate_village, max_pii_count

logger = logging.getLogger(__name__)

TRIMMING = "trimming"
TWO_PERIOD = "two-period"


@dataclass(frozen=True, eq=False)
class Grid:
    """Rectangular product of strictly increasing p and q axes."""

    p_values: np.ndarray
    q_values: np.ndarray

    def __post_init__(self):
        for name in ("p_values", "q_values"):
            axis = np.asarray(getattr(self, name), dtype=float)
            if axis.ndim != 1 or axis.size == 0:
                raise InputError(f"grid axis {name} must be a non-empty list")
            if (np.diff(axis) <= 0).any():
                raise InputError(f"grid axis {name} must be strictly increasing")
            if axis[0] < 0.0 or axis[-1] > 1.0:
                raise InputError(f"grid axis {name} must lie in [0, 1]")
            axis.setflags(write=False)
            object.__setattr__(self, name, axis)

    @classmethod
    def regular(cls, minimum: float = config.DEFAULT_GRID_MIN, maximum: float = config.DEFAULT_GRID_MAX,
                step: float = config.DEFAULT_GRID_STEP) -> "Grid":
        axis = _regular_axis(minimum, maximum, step)
        return cls(axis, axis)

    @classmethod
    def from_axes(cls, p_axis: Tuple[float, float, float], q_axis: Tuple[float, float, float]) -> "Grid":
        return cls(_regular_axis(*p_axis), _regular_axis(*q_axis))

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.p_values.size, self.q_values.size)

    def points(self) -> Iterable[Tuple[int, int, ParamPoint]]:
        """Grid points in row-major order (p outer, q inner)."""
        for i, p in enumerate(self.p_values):
            for j, q in enumerate(self.q_values):
                yield i, j, ParamPoint(float(p), float(q))

    def is_boundary(self, i: int, j: int) -> bool:
        n_p, n_q = self.shape
        return i in (0, n_p - 1) or j in (0, n_q - 1)

    def restrict(self, p_range: Tuple[float, float], q_range: Tuple[float, float]) -> "Grid":
        """Sub-rectangle with both ends inclusive."""
        p = self.p_values[(self.p_values >= p_range[0]) & (self.p_values <= p_range[1])]
        q = self.q_values[(self.q_values >= q_range[0]) & (self.q_values <= q_range[1])]
        return Grid(p, q)


def _regular_axis(minimum: float, maximum: float, step: float) -> np.ndarray:
    if step <= 0:
        raise InputError(f"grid step must be positive, got {step}")
    if maximum < minimum:
        raise InputError(f"grid maximum {maximum} is below minimum {minimum}")
    count = int(np.floor((maximum - minimum) / step + 1e-9)) + 1
    return np.round(minimum + step * np.arange(count), 12)


@dataclass(eq=False)
class LikelihoodSurface:
    """Log-likelihood on every grid point; rows are p, columns are q."""

    grid: Grid
    values: np.ndarray
    d: Optional[int] = None
    dead_branches: Optional[np.ndarray] = None
    estimator: str = TRIMMING
    parts: Optional[List["LikelihoodSurface"]] = field(default=None, repr=False)  # per village

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise InputError(f"surface shape {self.values.shape} does not match grid {self.grid.shape}")
        if self.dead_branches is None:
            self.dead_branches = np.zeros(self.grid.shape, dtype=np.int64)

    def __add__(self, other: "LikelihoodSurface") -> "LikelihoodSurface":
        return LikelihoodSurface(self.grid, self.values + other.values, self.d,
                                 self.dead_branches + other.dead_branches, self.estimator)

    @property
    def all_infinite(self) -> bool:
        return not np.isfinite(self.values).any()

    def argmax(self) -> Tuple[int, int]:
        """First maximum in row-major order, i.e. the lexicographically smallest (p, q)."""
        if self.all_infinite:
            raise EstimationFailedError("every grid point has log-likelihood -inf")
        flat = np.where(np.isfinite(self.values), self.values, -np.inf)
        return tuple(int(k) for k in np.unravel_index(int(np.argmax(flat)), flat.shape))

    @property
    def max_value(self) -> float:
        i, j = self.argmax()
        return float(self.values[i, j])


@dataclass
class EstimateRecord:
    """
    Argmax and confidence sets of one estimator; a failed record keeps only
    ``d`` and the error, with no estimate.
    """

    p_hat: Optional[float]
    q_hat: Optional[float]
    d: Optional[int]
    log_likelihood: Optional[float]
    confidence_sets: Dict[float, List[Tuple[float, float]]] = field(default_factory=dict)
    boundary: bool = False
    estimator: str = TRIMMING
    error: Optional[str] = None

    @classmethod
    def failed(cls, d: Optional[int], error: str, estimator: str = TRIMMING) -> "EstimateRecord":
        return cls(p_hat=None, q_hat=None, d=d, log_likelihood=None, estimator=estimator, error=error)

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def label(self) -> str:
        if self.estimator == TWO_PERIOD:
            return TWO_PERIOD
        return "exact" if self.d is None else f"d={self.d}"

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "d": self.d,
            "p_hat": self.p_hat,
            "q_hat": self.q_hat,
            "log_likelihood": self.log_likelihood,
            "boundary": self.boundary,
            "confidence_sets": {f"{level:g}": [list(point) for point in points]
                                for level, points in self.confidence_sets.items()},
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "EstimateRecord":
        return cls(
            p_hat=payload["p_hat"],
            q_hat=payload["q_hat"],
            d=payload["d"],
            log_likelihood=payload["log_likelihood"],
            confidence_sets={float(level): [tuple(point) for point in points]
                             for level, points in payload["confidence_sets"].items()},
            boundary=payload["boundary"],
            estimator=payload["estimator"],
            error=payload.get("error"),
        )


def chi2_critical_value(level: float, dof: int = config.CHI2_DEGREES_OF_FREEDOM) -> float:
    """Chi-square quantile at ``level``."""
    if not 0.0 < level < 1.0:
        raise InputError(f"confidence level must lie in (0, 1), got {level}")
    return float(chi2.ppf(level, dof))


def lr_confidence_set(surface: LikelihoodSurface, level: float) -> List[Tuple[float, float]]:
    """Grid points whose LR statistic 2 (L_max - L) does not exceed the chi-square(2) quantile."""
    critical = chi2_critical_value(level)
    best = surface.max_value
    finite = np.isfinite(surface.values)
    statistic = np.where(finite, 2.0 * (best - surface.values), np.inf)
    return [point.as_tuple() for i, j, point in surface.grid.points() if statistic[i, j] <= critical]


def _raise_all_infinite(surface: LikelihoodSurface, villages: Optional[Sequence[Village]]) -> None:
    parts = surface.parts if surface.parts is not None else [surface]
    names = [v.name for v in villages] if villages is not None and surface.parts is not None else [None] * len(parts)
    dead = [(name, part) for name, part in zip(names, parts) if part.all_infinite]
    # without a dead village the villages are finite on disjoint parts of the grid
    blamed = dead[:1] or list(zip(names, parts))
    culprit = dead[0][0] if dead else None
    where = f" for village {culprit}" if culprit else ""
    if surface.estimator == TRIMMING and any(part.d is not None for _, part in blamed):
        raise TrimmingDeadEndError(
            f"trimming at d={surface.d} leaves no branch with positive probability{where} at any grid point",
            d=surface.d, village=culprit)
    raise EstimationFailedError(
        f"every grid point has log-likelihood -inf{where}; the data has probability zero on this grid",
        village=culprit)


def estimate_or_failure(surface: LikelihoodSurface,
                        levels: Sequence[float] = config.DEFAULT_CONFIDENCE_LEVELS,
                        villages: Optional[Sequence[Village]] = None) -> EstimateRecord:
    """Estimate record of a surface, or a failed record when trimming is the cause of an all -inf surface."""
    try:
        return estimate_from_surface(surface, levels, villages)
    except TrimmingDeadEndError as exc:
        logger.warning("d=%s: %s", surface.d, exc.message)
        return EstimateRecord.failed(surface.d, f"{type(exc).__name__}: {exc.message}", surface.estimator)


def estimate_from_surface(surface: LikelihoodSurface,
                          levels: Sequence[float] = config.DEFAULT_CONFIDENCE_LEVELS,
                          villages: Optional[Sequence[Village]] = None) -> EstimateRecord:
    """
    Argmax and confidence sets of a sample surface.

    Raises:
        TrimmingDeadEndError: a trimmed village surface is -inf everywhere
        EstimationFailedError: an exact village surface is -inf everywhere
    """
    if surface.all_infinite:
        _raise_all_infinite(surface, villages)
    i, j = surface.argmax()
    return EstimateRecord(
        p_hat=float(surface.grid.p_values[i]),
        q_hat=float(surface.grid.q_values[j]),
        d=surface.d,
        log_likelihood=float(surface.values[i, j]),
        confidence_sets={float(level): lr_confidence_set(surface, level) for level in sorted(levels)},
        boundary=surface.grid.is_boundary(i, j),
        estimator=surface.estimator,
    )


def two_period_log_likelihood(village: Village, params: ParamPoint) -> float:
    """
    Closed-form likelihood of the first two periods; later periods are ignored.

    Period-2 factors use reception from the seed vector: r p for a new
    participant, 1 - r p for a reachable uninformed non-participant, 1 otherwise.
    """
    if village.periods < 2:
        raise InputError(f"village {village.name} has {village.periods} period(s); at least 2 are needed")
    y1, y2 = village.outcomes.period(1), village.outcomes.period(2)
    s0 = village.seeds.s0
    r = reception_from_counts(village.network.informed_neighbor_counts(s0), params.q)
    new = ~y1 & y2
    factors = first_outcome_density(y1, s0, params.p)
    factors = factors * np.where(new, np.where(s0, 0.0, r * params.p), 1.0)
    in_reach = ~y2 & ~s0 & (r > 0)
    factors = factors * np.where(in_reach, 1.0 - r * params.p, 1.0)
    with np.errstate(divide="ignore"):
        return float(np.log(factors).sum())


def resolve_dbars(villages: Sequence[Village], budget: Optional[int] = None) -> List[Optional[int]]:
    """
    Maximal PII count per village; ``None`` when the exact tree exceeds ``budget``.
    """
    dbars: List[Optional[int]] = []
    for village in villages:
        if budget is not None:
            try:
                check_budget(village, budget)
            except BudgetExceededError as exc:
                logger.warning("Village %s: %s; its maximal PII count is unknown", village.name, exc.message)
                dbars.append(None)
                continue
        dbars.append(max_pii_count(village))
        logger.info("Village %s: maximal PII count %d", village.name, dbars[-1])
    return dbars


def effective_d(d: Optional[int], dbar: Optional[int], village: Village, budget: Optional[int] = None) -> Optional[int]:
    """Trimming value actually applied to a village; ``None`` means exact."""
    if dbar is None:
        if d is None:
            check_budget(village, budget if budget is not None else config.DEFAULT_SCENARIO_BUDGET)
        return d
    if d is None or d >= dbar:
        return None
    return d


def sample_log_likelihood(villages: Sequence[Village], params: ParamPoint, d: Optional[int],
                          dbars: Optional[Sequence[Optional[int]]] = None) -> float:
    """Sum of village log-likelihoods, each trimmed at min(d, its maximal PII count)."""
    if dbars is None:
        dbars = [max_pii_count(v) for v in villages]
    total = 0.0
    for village, dbar in zip(villages, dbars):
        total += evaluate_village(village, params, effective_d(d, dbar, village)).log_likelihood
    return total


def _evaluate_point(task: Tuple[str, int, Optional[int], float, float]) -> Tuple[float, int, float]:
    """Worker task: one village at one grid point, with its evaluation time."""
    estimator, index, d, p, q = task
    village = shared("villages")[index]
    params = ParamPoint(p, q)
    start = time.perf_counter()
    if estimator == TWO_PERIOD:
        return two_period_log_likelihood(village, params), 0, time.perf_counter() - start
    result = evaluate_village(village, params, d)
    return result.log_likelihood, result.dead_branches, time.perf_counter() - start


def village_surfaces(villages: Sequence[Village], grid: Grid, plan: Sequence[Tuple[int, Optional[int]]],
                     workers: int = config.DEFAULT_WORKERS,
                     estimator: str = TRIMMING) -> List[LikelihoodSurface]:
    """
    Evaluate one surface per (village index, trimming value) pair in ``plan``.

    All (village, grid point) tasks of the plan go to one pool; results are
    gathered by index so the surfaces do not depend on ``workers``.
    """
    points = [(i, j, point) for i, j, point in grid.points()]
    tasks = [(estimator, v, d, point.p, point.q) for v, d in plan for _, _, point in points]
    start = time.perf_counter()
    results = run_indexed(_evaluate_point, tasks, workers, initializer=install_shared,
                          initkwargs={"villages": list(villages)}, label="grid points")
    surfaces = []
    size = len(points)
    for k, (v, d) in enumerate(plan):
        chunk = results[k * size:(k + 1) * size]
        values = np.array([value for value, _, _ in chunk], dtype=float).reshape(grid.shape)
        dead = np.array([count for _, count, _ in chunk], dtype=np.int64).reshape(grid.shape)
        surfaces.append(LikelihoodSurface(grid, values, d, dead, estimator))
        # summed over tasks, independent of the pool size
        logger.info("Village %s (%s): %d grid points evaluated in %.2fs", villages[v].name,
                    TWO_PERIOD if estimator == TWO_PERIOD else ("exact" if d is None else f"d={d}"),
                    size, sum(seconds for _, _, seconds in chunk))
        heavy = int((dead > 0).sum())
        if heavy and estimator == TRIMMING:
            logger.debug("Village %s (d=%s): %d grid points with dead branches", villages[v].name, d, heavy)
    logger.info("Evaluated %d surface(s) on %d grid points in %.2fs",
                len(plan), size, time.perf_counter() - start)
    return surfaces


def sample_surfaces(villages: Sequence[Village], grid: Grid, d_values: Sequence[Optional[int]],
                    workers: int = config.DEFAULT_WORKERS,
                    dbars: Optional[Sequence[Optional[int]]] = None,
                    budget: Optional[int] = None) -> Dict[Optional[int], LikelihoodSurface]:
    """
    Sample surfaces for several trimming values.

    A village is evaluated once per distinct effective trimming value, so
    surfaces for all d at or above its maximal PII count are shared.
    """
    if dbars is None:
        dbars = resolve_dbars(villages, budget)
    needed: Dict[Tuple[int, Optional[int]], int] = {}
    per_d: Dict[Optional[int], List[Tuple[int, Optional[int]]]] = {}
    for d in d_values:
        keys = [(v, effective_d(d, dbars[v], village, budget)) for v, village in enumerate(villages)]
        for key in keys:
            needed.setdefault(key, len(needed))
        per_d[d] = keys
    plan = sorted(needed, key=needed.get)
    computed = dict(zip(plan, village_surfaces(villages, grid, plan, workers)))

    surfaces = {}
    for d, keys in per_d.items():
        parts = [computed[key] for key in keys]
        total = LikelihoodSurface(grid, np.zeros(grid.shape), d)
        for part in parts:
            total = total + part
        total.d = d
        total.parts = parts
        surfaces[d] = total
    return surfaces


def grid_search(villages: Sequence[Village], grid: Grid, d: Optional[int],
                levels: Sequence[float] = config.DEFAULT_CONFIDENCE_LEVELS,
                workers: int = config.DEFAULT_WORKERS,
                dbars: Optional[Sequence[Optional[int]]] = None,
                budget: Optional[int] = None) -> Tuple[LikelihoodSurface, EstimateRecord]:
    """
    Evaluate the trimmed sample log-likelihood on every grid point.

    Args:
        villages: Validated villages
        grid: Parameter grid
        d: Trimming value; ``None`` for the exact likelihood
        levels: Confidence levels of the LR sets
        workers: Worker processes
        dbars: Precomputed maximal PII counts
        budget: Scenario budget for exact evaluation

    Returns:
        The sample surface and its estimate record
    """
    if not villages:
        raise InputError("no villages to estimate from")
    surface = sample_surfaces(villages, grid, [d], workers, dbars, budget)[d]
    return surface, estimate_from_surface(surface, levels, villages)


def grid_search_two_period(villages: Sequence[Village], grid: Grid,
                           levels: Sequence[float] = config.DEFAULT_CONFIDENCE_LEVELS,
                           workers: int = config.DEFAULT_WORKERS) -> Tuple[LikelihoodSurface, EstimateRecord]:
    """Grid search of the two-period baseline estimator."""
    if not villages:
        raise InputError("no villages to estimate from")
    parts = village_surfaces(villages, grid, [(v, None) for v in range(len(villages))], workers, TWO_PERIOD)
    surface = LikelihoodSurface(grid, np.sum([s.values for s in parts], axis=0), None, None, TWO_PERIOD, parts)
    return surface, estimate_from_surface(surface, levels, villages)


def estimate_sequence(villages: Sequence[Village], grid: Grid, d_values: Sequence[int],
                      levels: Sequence[float] = config.DEFAULT_CONFIDENCE_LEVELS,
                      workers: int = config.DEFAULT_WORKERS,
                      dbars: Optional[Sequence[Optional[int]]] = None,
                      budget: Optional[int] = None,
                      surfaces_out: Optional[Dict] = None) -> List[EstimateRecord]:
    """
    One estimate record per trimming value plus the two-period baseline (last).

    A trimming value whose surface is -inf everywhere because trimming
    dropped every feasible branch gets a failed record; the other records
    are kept. ``surfaces_out``, when given, receives the sample surfaces
    keyed by d and by ``"two-period"``.
    """
    d_list = list(d_values)
    if any(d is None or d < 0 for d in d_list):
        raise InputError("trimming values must be non-negative integers")
    if d_list != sorted(d_list):
        raise InputError(f"trimming values must be sorted ascending, got {d_list}")
    records = []
    surfaces = sample_surfaces(villages, grid, d_list, workers, dbars, budget)
    for d in d_list:
        record = estimate_or_failure(surfaces[d], levels, villages)
        records.append(record)
        if record.ok:
            logger.info("d=%d: p=%.4g q=%.4g loglik=%.6g", d, record.p_hat, record.q_hat, record.log_likelihood)
    baseline_surface, baseline = grid_search_two_period(villages, grid, levels, workers)
    records.append(baseline)
    failed = [r.d for r in records if not r.ok]
    if failed:
        logger.warning("No estimate at d in %s: trimming dead-end", failed)
    if surfaces_out is not None:
        surfaces_out.update(surfaces)
        surfaces_out[TWO_PERIOD] = baseline_surface
    return records
