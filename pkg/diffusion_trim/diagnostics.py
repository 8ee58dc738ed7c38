"""
Approximation-error diagnostics for the trimming estimator and audits of
individual trimming choices.
"""

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np
from scipy.special import logsumexp

from diffusion_trim import config
from diffusion_trim.errors import InputError, InsufficientDataError
from diffusion_trim.model import ParamPoint, SeedVector, Village, VillageNetwork
from diffusion_trim.scenarios import (
    ExchangeState,
    TrimPlan,
    assign_exchange,
    check_budget,
    continuation_log_mass,
    eligible_piis,
    evaluate_village,
    initial_state,
    max_pii_count,
    trim_select,
)

logger = logging.getLogger(__name__)


def _logsumexp(values: Iterable[float]) -> float:
    arr = np.asarray(list(values), dtype=float)
    finite = arr[np.isfinite(arr)]
    return float(logsumexp(finite)) if finite.size else -np.inf


@dataclass(eq=False)
class ErrorCurve:
    """
    Trimmed log-likelihoods for d = 0..d_max against the exact value.

    ``log_new_mass[d]`` is the log of the probability mass retained at d but
    not at d - 1 (for d = 0, all mass retained at 0).
    """

    village: str
    params: ParamPoint
    exact: float
    log_retained: np.ndarray
    log_new_mass: np.ndarray
    dbar: int

    @property
    def epsilons(self) -> np.ndarray:
        return self.exact - np.asarray(self.log_retained, dtype=float)

    @property
    def d_values(self) -> np.ndarray:
        return np.arange(len(self.log_retained))


def error_curve(village: Village, params: ParamPoint, d_max: Optional[int] = None,
                budget: int = config.DEFAULT_SCENARIO_BUDGET) -> ErrorCurve:
    """
    epsilon_d = exact - trimmed log-likelihood for every d up to ``d_max``.

    The newly retained mass at each d is computed from the retained leaf sets,
    independently of the trimmed totals.

    Raises:
        BudgetExceededError: when the village is too large for exact evaluation
    """
    check_budget(village, budget)
    dbar = max_pii_count(village)
    d_max = dbar if d_max is None else d_max
    if d_max < 0:
        raise InputError(f"d_max must be non-negative, got {d_max}")
    exact = evaluate_village(village, params).log_likelihood

    retained, new_mass = [], []
    previous: Set[Tuple[bytes, ...]] = set()
    for d in range(d_max + 1):
        result = evaluate_village(village, params, d, keep_leaves=True)
        retained.append(result.log_likelihood)
        new_mass.append(_logsumexp(mass for key, mass in zip(result.leaf_keys, result.leaf_log_masses)
                                   if key not in previous))
        missing = previous.difference(result.leaf_keys)
        if missing:
            logger.warning("Village %s: %d leaves retained at d=%d are dropped at d=%d",
                           village.name, len(missing), d - 1, d)
        previous = set(result.leaf_keys)
    logger.info("Village %s: error curve at (p=%g, q=%g) for d=0..%d", village.name, params.p, params.q, d_max)
    return ErrorCurve(village.name, params, exact, np.array(retained), np.array(new_mass), dbar)


@dataclass
class SlopeReport:
    slopes: np.ndarray  # epsilon_{d-1} - epsilon_d for d >= 1
    predicted: np.ndarray  # log(1 + P(s_d) / retained mass at d - 1)
    max_discrepancy: float


def slope_identity_check(curve: ErrorCurve) -> SlopeReport:
    """Compare each error-curve step with the newly retained mass it should equal."""
    eps = curve.epsilons
    if eps.size < 2:
        return SlopeReport(np.zeros(0), np.zeros(0), 0.0)
    slopes = eps[:-1] - eps[1:]
    with np.errstate(over="ignore", invalid="ignore"):
        predicted = np.log1p(np.exp(curve.log_new_mass[1:] - curve.log_retained[:-1]))
    predicted = np.where(np.isneginf(curve.log_new_mass[1:]), 0.0, predicted)
    comparable = np.isfinite(slopes) & np.isfinite(predicted)
    discrepancy = np.abs(slopes - predicted)[comparable]
    return SlopeReport(slopes, predicted, float(discrepancy.max()) if discrepancy.size else 0.0)


@dataclass
class ConvexityReport:
    ratios: np.ndarray  # P(s_d) / retained mass at d - 1, for d >= 1
    violations: List[int] = field(default_factory=list)
    kinks: List[int] = field(default_factory=list)

    @property
    def convex(self) -> bool:
        return not self.violations


def convexity_report(curve: ErrorCurve, rtol: float = config.RELATIVE_TOLERANCE) -> ConvexityReport:
    """
    Check that newly retained mass relative to prior mass never increases with d.

    A violation at d means the ratio grew from d - 1 to d. A kink at d means
    the new mass alone outweighs everything retained before it, so the error
    drops by more than log 2.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        ratios = np.exp(curve.log_new_mass[1:] - curve.log_retained[:-1])
    violations = [d for d in range(2, len(curve.log_retained))
                  if ratios[d - 1] > ratios[d - 2] * (1.0 + rtol)]
    kinks = [d for d in range(1, len(curve.log_retained)) if ratios[d - 1] > 1.0 + rtol]
    return ConvexityReport(ratios, violations, kinks)


@dataclass
class ErrorBoundReport:
    e1: int
    d: int
    factor: float
    nominal_factor: float
    log_min_retained: float
    log_bound: float  # bound on the omitted first-exchange mass
    log_nominal_bound: float
    log_omitted: float
    epsilon: float  # first-exchange error, log space
    epsilon_bound: float
    selection_holds: bool

    @property
    def holds(self) -> bool:
        return self.epsilon <= self.epsilon_bound + config.RELATIVE_TOLERANCE * max(1.0, abs(self.epsilon_bound))


def first_exchange_masses(village: Village, params: ParamPoint) -> Tuple[ExchangeState, List[int], Dict[frozenset, float]]:
    """
    Exact total mass of every first-exchange PII assignment.

    Returns:
        The root state, the eligible PIIs and, per set of informed PIIs, the
        log-probability of all scenarios that start with that assignment
    """
    if village.periods < 3:
        raise InputError(f"village {village.name} needs at least 3 periods for a branching first exchange")
    root = initial_state(village, params)
    piis = [e.individual for e in eligible_piis(root, village, params)]
    masses = {}
    for size in range(len(piis) + 1):
        for subset in itertools.combinations(piis, size):
            child = assign_exchange(root, village, params, subset)
            masses[frozenset(subset)] = continuation_log_mass(village, params, child)
    return root, piis, masses


def _retained(subset: frozenset, plan: TrimPlan) -> bool:
    return set(plan.to_a) <= subset and not subset.intersection(plan.to_b)


def _outweighs(candidate: float, reference: float) -> bool:
    if not np.isfinite(reference):
        return candidate > reference
    return candidate > reference + config.RELATIVE_TOLERANCE * max(1.0, abs(reference))


def error_bound(village: Village, params: ParamPoint, d: int,
                budget: int = config.DEFAULT_SCENARIO_BUDGET) -> ErrorBoundReport:
    """
    Bound the first-exchange trimming error by the least likely retained assignment.

    The omitted mass is bounded by the minimal retained mass times
    max(2^(e1-d), 2^e1 - 2^d); the nominal 2^(e1-d) bound is reported too.
    The bound is guaranteed when every retained assignment is at least as
    likely as every omitted one (``selection_holds``).
    """
    check_budget(village, budget)
    root, piis, masses = first_exchange_masses(village, params)
    e1 = len(piis)
    if d < 0:
        raise InputError(f"d must be non-negative, got {d}")
    d = min(d, e1)
    plan = trim_select(eligible_piis(root, village, params), params, d)
    kept = [m for s, m in masses.items() if _retained(s, plan)]
    dropped = [m for s, m in masses.items() if not _retained(s, plan)]

    log_min = min(kept)
    nominal = 2.0 ** (e1 - d)
    factor = max(nominal, 2.0 ** e1 - 2.0 ** d)
    log_retained, log_omitted = _logsumexp(kept), _logsumexp(dropped)
    log_bound = log_min + np.log(factor) if np.isfinite(log_min) else -np.inf
    exact = _logsumexp([log_retained, log_omitted])
    with np.errstate(over="ignore", invalid="ignore"):
        epsilon_bound = float(np.log1p(np.exp(log_bound - log_retained)))
    return ErrorBoundReport(
        e1=e1, d=d, factor=factor, nominal_factor=nominal,
        log_min_retained=float(log_min),
        log_bound=float(log_bound),
        log_nominal_bound=float(log_min + np.log(nominal)),
        log_omitted=log_omitted,
        epsilon=float(exact - log_retained),
        epsilon_bound=epsilon_bound,
        selection_holds=not any(_outweighs(m, log_min) for m in dropped),
    )


@dataclass
class InterpolatedError:
    estimate: float
    first_slope: float
    curvature: str  # linear, convex, concave, mixed or unknown
    conservative: bool


def interpolated_error_estimate(log_retained: Sequence[float], e1: int,
                                atol: float = 1e-12) -> InterpolatedError:
    """
    Extrapolate the d = 0 error from the first step of the error curve.

    The curve is assumed to fall linearly to zero at d = e1. The estimate
    overstates the true error when the observed curve is convex.

    Args:
        log_retained: Trimmed log-likelihoods for d = 0..k, k >= 1
        e1: Value of d at which the error vanishes

    Raises:
        InsufficientDataError: fewer than two curve points
    """
    values = np.asarray(log_retained, dtype=float)
    if values.size < 2:
        raise InsufficientDataError(f"need at least two curve points, got {values.size}")
    if e1 < 1:
        raise InputError(f"e1 must be at least 1, got {e1}")
    steps = np.diff(values)  # epsilon_{d-1} - epsilon_d
    first_slope = float(steps[0])
    if values.size < 3:
        curvature = "unknown"
    else:
        # convex error curve: its steps shrink with d
        change = np.diff(steps)
        if (np.abs(change) <= atol).all():
            curvature = "linear"
        elif (change <= atol).all():
            curvature = "convex"
        elif (change >= -atol).all():
            curvature = "concave"
        else:
            curvature = "mixed"
    return InterpolatedError(e1 * first_slope, first_slope, curvature, curvature in ("linear", "convex"))


def _intermediates_and_finals(net: VillageNetwork, s0: SeedVector) -> Tuple[List[int], List[int]]:
    ips = set(int(i) for i in s0.ips)
    intermediates = sorted({int(j) for i in ips for j in net.neighbors(i)} - ips)
    finals = sorted({int(k) for j in intermediates for k in net.neighbors(j)} - ips - set(intermediates))
    return intermediates, finals


def ip_betweenness(net: VillageNetwork, s0: SeedVector, intermediates: Optional[Sequence[int]] = None,
                   finals: Optional[Sequence[int]] = None) -> Dict[int, float]:
    """
    Share of final agents' access to the injection points that runs through each intermediate.

    b_j sums, over the final agents k adjacent to j, one over the number of
    intermediates adjacent to k.
    """
    default_i, default_f = _intermediates_and_finals(net, s0)
    intermediates = default_i if intermediates is None else [int(j) for j in intermediates]
    finals = default_f if finals is None else [int(k) for k in finals]
    adj = net.adjacency
    ips = s0.ips
    for j in intermediates:
        if not adj[j, ips].any():
            raise InputError(f"intermediate agent {j + 1} is not adjacent to an injection point")
    for k in finals:
        if adj[k, ips].any():
            raise InputError(f"final agent {k + 1} is adjacent to an injection point")

    b = {j: 0.0 for j in intermediates}
    for k in finals:
        routes = [j for j in intermediates if adj[j, k]]
        if not routes:
            logger.warning("Final agent %d has no intermediate neighbour; excluded", k + 1)
            continue
        for j in routes:
            b[j] += 1.0 / len(routes)
    return b


class Verdict(Enum):
    OPTIMAL = "optimal"
    MISTAKE_1 = "mistake_1"  # A chosen, B more likely
    MISTAKE_2 = "mistake_2"  # B chosen, A more likely


@dataclass
class SubgraphAudit:
    agent: int
    b: float
    in_degree: int
    out_degree: int
    default: str
    verdict: Verdict
    group: int
    log_chosen_mass: float  # least likely retained assignment
    log_alternative_mass: float  # heaviest omitted assignment reversing this default

    @property
    def node(self) -> int:
        return self.agent + 1


def _groups(net: VillageNetwork, trimmed: Sequence[int], finals: Sequence[int]) -> List[List[int]]:
    """Trimmed agents linked through shared final agents."""
    graph = nx.Graph()
    graph.add_nodes_from(("agent", j) for j in trimmed)
    for j in trimmed:
        for k in finals:
            if net.adjacency[j, k]:
                graph.add_edge(("agent", j), ("final", k))
    groups = [sorted(node for kind, node in component if kind == "agent")
              for component in nx.connected_components(graph)]
    return sorted((g for g in groups if g), key=lambda g: g[0])


def mistake_audit(village: Village, params: ParamPoint, d: int,
                  budget: int = config.DEFAULT_SCENARIO_BUDGET) -> List[SubgraphAudit]:
    """
    Audit the first-exchange trimming defaults against the assignments they omit.

    Every first-exchange assignment is scored by the exact probability of all
    scenarios that start with it. A trimmed agent's default is a mistake when
    some omitted assignment giving the agent the opposite status outweighs
    the least likely retained assignment. Zero mistakes is therefore the
    selection condition under which ``error_bound`` is guaranteed. Agents
    sharing final agents are reported in one group.
    """
    check_budget(village, budget)
    root, _, masses = first_exchange_masses(village, params)
    plan = trim_select(eligible_piis(root, village, params), params, d)
    intermediates, finals = _intermediates_and_finals(village.network, village.seeds)
    b = ip_betweenness(village.network, village.seeds, intermediates, finals)
    adj = village.network.adjacency
    final_set = set(finals)
    to_a = set(plan.to_a)
    log_min = min(m for s, m in masses.items() if _retained(s, plan))
    omitted = [(s, m) for s, m in masses.items() if not _retained(s, plan)]

    audits = []
    for group_id, group in enumerate(_groups(village.network, plan.trimmed, finals)):
        for j in group:
            default = "A" if j in to_a else "B"
            alternative = max((m for s, m in omitted if (j in s) != (j in to_a)), default=-np.inf)
            if not _outweighs(alternative, log_min):
                verdict = Verdict.OPTIMAL
            else:
                verdict = Verdict.MISTAKE_1 if default == "A" else Verdict.MISTAKE_2
            audits.append(SubgraphAudit(
                agent=j,
                b=b.get(j, 0.0),
                in_degree=int(np.count_nonzero(adj[j] & village.seeds.s0)),
                out_degree=sum(1 for k in village.network.neighbors(j) if int(k) in final_set),
                default=default,
                verdict=verdict,
                group=group_id,
                log_chosen_mass=float(log_min),
                log_alternative_mass=float(alternative),
            ))
    mistakes = sum(a.verdict is not Verdict.OPTIMAL for a in audits)
    logger.info("Village %s at (p=%g, q=%g), d=%d: %d trimmed agents audited, %d mistakes",
                village.name, params.p, params.q, d, len(audits), mistakes)
    return audits
