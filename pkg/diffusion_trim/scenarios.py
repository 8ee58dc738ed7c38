"""
Scenario engine: exact and trimmed village likelihoods.

The likelihood is a sum over latent information scenarios. Branches are
expanded depth-first, one information exchange at a time, keeping only the
Markov state (current status vector and accumulated log-probability). In the
first T-2 exchanges at most ``d`` potentially informed individuals (PIIs) stay
free; the others are fixed to whichever of "newly informed and opted out" (A)
or "uninformed" (B) is more likely. The last exchange is summed analytically.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from diffusion_trim import config
from diffusion_trim.errors import BudgetExceededError, InputError
from diffusion_trim.model import (
    InfoScenario,
    ParamPoint,
    PIIContribution,
    Village,
    VillageNetwork,
    SeedVector,
    first_outcome_density,
    info_density,
    outcome_density,
    reception_from_counts,
    trim_threshold,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ExchangeState:
    """Markov state of one branch after ``t`` information exchanges."""

    t: int
    informed: np.ndarray  # S_t
    opted_out: np.ndarray  # informed and not participating in period t + 1
    log_prob: float
    path: Tuple[bytes, ...] = ()  # packed S_1..S_t, only when tracked


@dataclass(frozen=True)
class EligiblePII:
    individual: int
    r: float
    contribution: PIIContribution


@dataclass(frozen=True)
class TrimPlan:
    """Partition of a branch's eligible PIIs into free, trimmed-to-A and trimmed-to-B."""

    free: Tuple[int, ...]
    to_a: Tuple[int, ...]
    to_b: Tuple[int, ...]
    threshold: float

    @property
    def trimmed(self) -> Tuple[int, ...]:
        return tuple(sorted(self.to_a + self.to_b))


@dataclass
class LikelihoodResult:
    """Village log-likelihood together with traversal statistics."""

    log_likelihood: float = -np.inf
    dead_branches: int = 0
    branches_by_depth: Dict[int, int] = field(default_factory=dict)
    max_piis: int = 0
    leaf_keys: Optional[List[Tuple[bytes, ...]]] = None
    leaf_log_masses: Optional[np.ndarray] = None

    @property
    def likelihood(self) -> float:
        return float(np.exp(self.log_likelihood))


@dataclass(frozen=True)
class _ExchangeTerms:
    r: np.ndarray
    new: np.ndarray
    fixed_log: float
    piis: np.ndarray
    log_a: np.ndarray
    log_b: np.ndarray


def _check_d(d: Optional[int]) -> None:
    if d is not None and d < 0:
        raise InputError(f"trimming value must be non-negative, got {d}")


def _exchange_terms(state: ExchangeState, village: Village, params: ParamPoint) -> _ExchangeTerms:
    """Everything exchange ``state.t + 1`` contributes before choosing PII statuses."""
    t_next = state.t + 1
    y = village.outcomes.y
    y_now, y_next = y[:, t_next - 1], y[:, t_next]
    counts = village.network.informed_neighbor_counts(state.informed)
    r = reception_from_counts(counts, params.q)
    new = ~y_now & y_next
    # a new participant must enter the exchange uninformed and be reached
    if (new & state.informed).any():
        fixed_log = -np.inf
    else:
        fixed_log = float(np.log(r[new] * params.p).sum())
    piis = np.flatnonzero(~y_next & ~state.informed & (r > 0))
    r_piis = r[piis]
    log_a = np.log(r_piis * (1.0 - params.p))
    log_b = np.log(1.0 - r_piis)
    return _ExchangeTerms(r, new, fixed_log, piis, log_a, log_b)


def initial_state(village: Village, params: ParamPoint) -> ExchangeState:
    """Branch root: the seed vector and the period-1 outcome probability."""
    y1 = village.outcomes.period(1)
    s0 = village.seeds.s0
    with np.errstate(divide="ignore"):
        log_p1 = float(np.log(first_outcome_density(y1, s0, params.p)).sum())
    return ExchangeState(0, s0.copy(), s0 & ~y1, log_p1)


def eligible_piis(state: ExchangeState, village: Village, params: ParamPoint) -> List[EligiblePII]:
    """Non-participants reachable in the next exchange who have not been informed before."""
    if state.t > village.periods - 2:
        raise InputError(f"no exchange follows state at t={state.t} with T={village.periods}")
    with np.errstate(divide="ignore"):
        terms = _exchange_terms(state, village, params)
    return [EligiblePII(int(i), float(terms.r[i]), PIIContribution.from_reception(float(terms.r[i]), params.p))
            for i in terms.piis]


def trim_select(piis: Sequence[EligiblePII], params: ParamPoint, d: Optional[int]) -> TrimPlan:
    """
    Keep the ``d`` PIIs closest to the threshold r* free and trim the rest.

    PIIs furthest from r* are trimmed first; equal distances trim the lower
    index first. A trimmed PII goes to A when r > r*, to B otherwise.
    """
    _check_d(d)
    threshold = trim_threshold(params.p)
    ordered = sorted(piis, key=lambda e: (-abs(e.r - threshold), e.individual))
    n_trim = 0 if d is None else max(len(ordered) - d, 0)
    trimmed, free = ordered[:n_trim], ordered[n_trim:]
    return TrimPlan(
        free=tuple(sorted(e.individual for e in free)),
        to_a=tuple(sorted(e.individual for e in trimmed if e.r > threshold)),
        to_b=tuple(sorted(e.individual for e in trimmed if e.r <= threshold)),
        threshold=threshold,
    )


def _subset_bits(k: int) -> np.ndarray:
    """All 2^k subsets of k items as boolean rows, ordered by their integer code."""
    codes = np.arange(2 ** k)[:, None]
    return ((codes >> np.arange(k)) & 1).astype(bool)


def _children(state: ExchangeState, village: Village, terms: _ExchangeTerms,
              base_a: np.ndarray, choices: np.ndarray, free_pos: np.ndarray,
              track_paths: bool) -> Tuple[List[ExchangeState], int]:
    """Build child states; ``choices`` rows mark which free PIIs are informed."""
    fixed = np.where(base_a, terms.log_a, terms.log_b)
    fixed[free_pos] = 0.0
    base_log = state.log_prob + terms.fixed_log + float(fixed.sum())
    if not np.isfinite(base_log):
        return [], choices.shape[0]
    free_log = np.where(choices, terms.log_a[free_pos], terms.log_b[free_pos]).sum(axis=1)
    child_logs = base_log + free_log

    base_informed = state.informed | terms.new
    base_informed[terms.piis[base_a]] = True
    free_idx = terms.piis[free_pos]
    y_next = village.outcomes.y[:, state.t + 1]

    children, dead = [], 0
    for row, log_prob in zip(choices, child_logs):
        if not np.isfinite(log_prob):
            dead += 1
            continue
        informed = base_informed.copy()
        informed[free_idx[row]] = True
        path = state.path + (np.packbits(informed).tobytes(),) if track_paths else ()
        children.append(ExchangeState(state.t + 1, informed, informed & ~y_next, float(log_prob), path))
    return children, dead


def expand_exchange(state: ExchangeState, plan: TrimPlan, village: Village, params: ParamPoint,
                    track_paths: bool = False) -> List[ExchangeState]:
    """
    One child per subset of the free set; trimmed PIIs take their default status.

    Children with probability zero are dropped.
    """
    children, _ = _expand(state, plan, village, params, track_paths)
    return children


def _expand(state, plan, village, params, track_paths):
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = _exchange_terms(state, village, params)
        position = {int(i): k for k, i in enumerate(terms.piis)}
        base_a = np.zeros(terms.piis.shape[0], dtype=bool)
        base_a[np.array([position[i] for i in plan.to_a], dtype=np.int64)] = True
        free_pos = np.array([position[i] for i in plan.free], dtype=np.int64)
        return _children(state, village, terms, base_a, _subset_bits(len(free_pos)), free_pos, track_paths)


def assign_exchange(state: ExchangeState, village: Village, params: ParamPoint,
                    informed_piis: Sequence[int], track_paths: bool = False) -> ExchangeState:
    """Child of ``state`` in which exactly ``informed_piis`` among the eligible PIIs are informed."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = _exchange_terms(state, village, params)
        chosen = set(int(i) for i in informed_piis)
        unknown = chosen.difference(int(i) for i in terms.piis)
        if unknown:
            raise InputError(f"individuals {sorted(i + 1 for i in unknown)} are not eligible PIIs")
        base_a = np.isin(terms.piis, list(chosen))
        choices = np.zeros((1, 0), dtype=bool)
        children, _ = _children(state, village, terms, base_a, choices, np.zeros(0, dtype=np.int64), track_paths)
    if children:
        return children[0]
    y_next = village.outcomes.y[:, state.t + 1]
    informed = state.informed | terms.new
    informed[terms.piis[base_a]] = True
    return ExchangeState(state.t + 1, informed, informed & ~y_next, -np.inf)


def _leaf_log_mass(state: ExchangeState, village: Village, params: ParamPoint) -> float:
    """Last exchange summed over both states of every PII: each contributes 1 - p r."""
    terms = _exchange_terms(state, village, params)
    r_piis = terms.r[terms.piis]
    return state.log_prob + terms.fixed_log + float(np.log1p(-params.p * r_piis).sum())


def evaluate_village(village: Village, params: ParamPoint, d: Optional[int] = None,
                     initial_states: Optional[Sequence[ExchangeState]] = None,
                     keep_leaves: bool = False) -> LikelihoodResult:
    """
    Depth-first evaluation of the (trimmed) village likelihood.

    Args:
        village: Validated village
        params: Grid point
        d: Trimming value; ``None`` means no trimming (exact likelihood)
        initial_states: Start from these states instead of the branch root
        keep_leaves: Record leaf keys and log-masses in traversal order

    Returns:
        LikelihoodResult with the log-sum-exp of the retained leaf masses
    """
    _check_d(d)
    T = village.periods
    if T < 2:
        raise InputError(f"village {village.name} has {T} period(s); at least 2 are needed")
    result = LikelihoodResult()
    stack = list(reversed(initial_states)) if initial_states is not None else [initial_state(village, params)]
    masses: List[float] = []
    keys: List[Tuple[bytes, ...]] = []

    with np.errstate(divide="ignore", invalid="ignore"):
        while stack:
            state = stack.pop()
            if not np.isfinite(state.log_prob):
                result.dead_branches += 1
                continue
            result.branches_by_depth[state.t] = result.branches_by_depth.get(state.t, 0) + 1
            if state.t >= T - 2:
                leaf = _leaf_log_mass(state, village, params)
                if np.isfinite(leaf):
                    masses.append(leaf)
                    keys.append(state.path)
                else:
                    result.dead_branches += 1
                continue
            piis = eligible_piis(state, village, params)
            result.max_piis = max(result.max_piis, len(piis))
            plan = trim_select(piis, params, d)
            children, dead = _expand(state, plan, village, params, keep_leaves)
            result.dead_branches += dead
            stack.extend(reversed(children))

        if masses:
            result.log_likelihood = float(logsumexp(np.asarray(masses)))
    if keep_leaves:
        result.leaf_keys = keys
        result.leaf_log_masses = np.asarray(masses)
    return result


def village_log_likelihood(village: Village, params: ParamPoint, d: Optional[int] = None) -> float:
    """Exact (``d=None``) or trimmed village log-likelihood; -inf when every branch is impossible."""
    return evaluate_village(village, params, d).log_likelihood


def continuation_log_mass(village: Village, params: ParamPoint, state: ExchangeState,
                          d: Optional[int] = None) -> float:
    """Log of the total probability of all scenarios continuing from ``state``."""
    return evaluate_village(village, params, d, initial_states=[state]).log_likelihood


def max_pii_count(village: Village) -> int:
    """Largest eligible-PII count of any branching exchange in the exact tree (d-bar)."""
    if village.periods <= 2:
        return 0
    return evaluate_village(village, ParamPoint(0.5, 0.5)).max_piis


def _neighbor_masks(net: VillageNetwork) -> List[int]:
    return [sum(1 << int(j) for j in net.neighbors(i)) for i in range(net.n)]


def _status_mask(status: np.ndarray) -> int:
    return sum(1 << int(i) for i in np.flatnonzero(status))


def _frontier(informed: int, nbr_masks: Sequence[int]) -> int:
    reach = 0
    rest = informed
    while rest:
        low = rest & -rest
        reach |= nbr_masks[low.bit_length() - 1]
        rest ^= low
    return reach & ~informed


def _submasks(mask: int) -> Iterator[int]:
    """All submasks of ``mask`` in increasing order."""
    sub = 0
    while True:
        yield sub
        if sub == mask:
            return
        sub = (sub - mask) & mask


def count_scenarios(net: VillageNetwork, s0: SeedVector, exchanges: int,
                    limit: Optional[int] = None) -> int:
    """
    Number of reachable monotone status sequences S_1 <= ... <= S_exchanges.

    Unconditional on outcomes. With ``limit`` the count stops as soon as it
    exceeds the limit and the partial count is returned.
    """
    if exchanges < 0:
        raise InputError(f"exchanges must be non-negative, got {exchanges}")
    nbr_masks = _neighbor_masks(net)
    memo: Dict[Tuple[int, int], int] = {}

    def count(informed: int, remaining: int) -> int:
        if remaining == 0:
            return 1
        key = (informed, remaining)
        if key in memo:
            return memo[key]
        total = 0
        for sub in _submasks(_frontier(informed, nbr_masks)):
            total += count(informed | sub, remaining - 1)
            if limit is not None and total > limit:
                break
        memo[key] = total
        return total

    return count(_status_mask(s0.s0), exchanges)


def enumerate_scenarios(net: VillageNetwork, s0: SeedVector, exchanges: int) -> Iterator[InfoScenario]:
    """Every reachable monotone information scenario, in a fixed order."""
    nbr_masks = _neighbor_masks(net)
    n = net.n

    def walk(informed: int, prefix: Tuple[int, ...]) -> Iterator[Tuple[int, ...]]:
        if len(prefix) == exchanges:
            yield prefix
            return
        for sub in _submasks(_frontier(informed, nbr_masks)):
            yield from walk(informed | sub, prefix + (informed | sub,))

    bits = np.arange(n)
    for columns in walk(_status_mask(s0.s0), ()):
        s = np.array([(c >> bits) & 1 for c in columns], dtype=np.uint8).T.reshape(n, exchanges)
        yield InfoScenario(s)


def scenario_probability(village: Village, params: ParamPoint, scenario: InfoScenario) -> float:
    """
    Joint probability P(Y = y, S = scenario | s0, G, p, q).

    Product of per-individual outcome and information densities; zero for
    scenarios the data rule out.
    """
    T = village.periods
    if scenario.exchanges != T - 1:
        raise InputError(f"scenario has {scenario.exchanges} exchanges, village needs {T - 1}")
    y = village.outcomes.y
    S = scenario.with_seeds(village.seeds)
    prob = float(np.prod(first_outcome_density(y[:, 0], S[:, 0], params.p)))
    for t in range(2, T + 1):
        s_prev, s_prev2 = S[:, t - 1], S[:, t - 2]
        counts = village.network.informed_neighbor_counts(s_prev2)
        r = reception_from_counts(counts, params.q)
        info = info_density(s_prev, s_prev2, r, y[:, t - 2])
        outcome = outcome_density(y[:, t - 1], y[:, t - 2], s_prev, s_prev2, params.p)
        prob *= float(np.prod(info * outcome))
    return prob


def brute_force_log_likelihood(village: Village, params: ParamPoint) -> float:
    """Log of the sum of ``scenario_probability`` over every reachable scenario."""
    total = sum(scenario_probability(village, params, s)
                for s in enumerate_scenarios(village.network, village.seeds, village.periods - 1))
    with np.errstate(divide="ignore"):
        return float(np.log(total))


def check_budget(village: Village, budget: int = config.DEFAULT_SCENARIO_BUDGET) -> int:
    """
    Refuse exact evaluation when the branching prefix has more scenarios than ``budget``.

    Returns:
        The prefix scenario count
    """
    prefix = max(village.periods - 2, 0)
    count = count_scenarios(village.network, village.seeds, prefix, limit=budget)
    if count > budget:
        raise BudgetExceededError(
            f"village {village.name} has more than {budget} scenarios in its first {prefix} "
            f"exchange(s); use a trimming value", estimate=count, limit=budget, village=village.name)
    return count
