"""
Domain types and per-individual densities of the network diffusion model.

An informed individual decides once whether to participate; informed
individuals pass the information to each neighbour independently with
probability q in every exchange. Participation (Y) is observed, information
(S) is latent except for the injection points.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np

from diffusion_trim.errors import InconsistentDataError, InputError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Sequence]


def _as_binary(values: ArrayLike, name: str, ndim: int) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != ndim:
        raise InputError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise InputError(f"{name} must be binary (0/1)")
    out = arr.astype(bool)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class VillageNetwork:
    """Symmetric binary adjacency matrix of one village."""

    adjacency: np.ndarray
    _counts_matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        adj = _as_binary(self.adjacency, "adjacency", 2)
        if adj.shape[0] != adj.shape[1]:
            raise InputError(f"adjacency must be square, got shape {adj.shape}")
        diagonal = np.flatnonzero(adj.diagonal())
        if diagonal.size:
            i = int(diagonal[0]) + 1
            raise InputError(f"nonzero diagonal entry g[{i},{i}]", individual=i)
        asymmetric = np.argwhere(adj != adj.T)
        if asymmetric.size:
            i, j = (int(x) + 1 for x in asymmetric[0])
            raise InputError(f"adjacency is not symmetric: g[{i},{j}] != g[{j},{i}]", pair=[i, j])
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "_counts_matrix", adj.astype(np.int64))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Tuple[int, int]]) -> "VillageNetwork":
        """Build a network from 0-based undirected edges."""
        adj = np.zeros((n, n), dtype=np.uint8)
        for i, j in edges:
            if not (0 <= i < n and 0 <= j < n):
                raise InputError(f"edge ({i + 1},{j + 1}) outside a {n}-node network")
            if i == j:
                raise InputError(f"self loop on node {i + 1}")
            adj[i, j] = adj[j, i] = 1
        return cls(adj)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def degree(self) -> np.ndarray:
        return self._counts_matrix.sum(axis=1)

    def informed_neighbor_counts(self, status: ArrayLike) -> np.ndarray:
        """Number of informed neighbours of every individual (vectorised over rows of status)."""
        status = np.asarray(status)
        if status.shape[-1] != self.n:
            raise InputError(f"status vector has length {status.shape[-1]}, network has {self.n} nodes")
        return status.astype(np.int64) @ self._counts_matrix

    def to_networkx(self) -> nx.Graph:
        return nx.from_numpy_array(self.adjacency.astype(np.uint8))

    def distances_from(self, sources: Iterable[int]) -> np.ndarray:
        """Graph distance to the nearest source, ``inf`` when unreachable."""
        lengths = nx.multi_source_dijkstra_path_length(self.to_networkx(), set(int(s) for s in sources))
        dist = np.full(self.n, np.inf)
        for node, length in lengths.items():
            dist[node] = length
        return dist

    def submatrix(self, start: int, size: int) -> "VillageNetwork":
        return VillageNetwork(self.adjacency[start:start + size, start:start + size])


@dataclass(frozen=True, eq=False)
class SeedVector:
    """Information injection points (IPs), observed at t = 0."""

    s0: np.ndarray

    def __post_init__(self):
        s0 = _as_binary(self.s0, "seed vector", 1)
        if not s0.any():
            raise InputError("seed vector has no information injection point")
        object.__setattr__(self, "s0", s0)

    @classmethod
    def from_indices(cls, n: int, ips: Iterable[int]) -> "SeedVector":
        s0 = np.zeros(n, dtype=np.uint8)
        s0[list(ips)] = 1
        return cls(s0)

    @property
    def n(self) -> int:
        return self.s0.shape[0]

    @property
    def ips(self) -> np.ndarray:
        return np.flatnonzero(self.s0)


@dataclass(frozen=True, eq=False)
class OutcomeMatrix:
    """Observed participation dummies, one row per individual, one column per period."""

    y: np.ndarray

    def __post_init__(self):
        y = _as_binary(self.y, "outcome matrix", 2)
        if y.shape[1] < 1:
            raise InputError("outcome matrix needs at least one period")
        # participation is absorbing
        drops = np.argwhere(y[:, :-1] & ~y[:, 1:])
        if drops.size:
            i, t = (int(x) for x in drops[0])
            raise InconsistentDataError(
                f"individual {i + 1} stops participating in period {t + 2}",
                individual=i + 1, period=t + 2)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def periods(self) -> int:
        return self.y.shape[1]

    def period(self, t: int) -> np.ndarray:
        """Outcome column of period t (1-based)."""
        return self.y[:, t - 1]

    def truncated(self, periods: int) -> "OutcomeMatrix":
        return OutcomeMatrix(self.y[:, :periods])


@dataclass(frozen=True, eq=False)
class InfoScenario:
    """One latent realisation of S_1..S_{T-1}; column 0 here is exchange 1."""

    s: np.ndarray

    def __post_init__(self):
        s = _as_binary(self.s, "information scenario", 2)
        forgotten = np.argwhere(s[:, :-1] & ~s[:, 1:])
        if forgotten.size:
            i, t = (int(x) for x in forgotten[0])
            raise InputError(f"individual {i + 1} forgets the information after exchange {t + 1}")
        object.__setattr__(self, "s", s)

    @property
    def exchanges(self) -> int:
        return self.s.shape[1]

    def with_seeds(self, seeds: SeedVector) -> np.ndarray:
        """Full status matrix with the seed vector as column 0."""
        return np.column_stack([seeds.s0, self.s]) if self.s.size else seeds.s0[:, None].copy()


@dataclass(frozen=True)
class ParamPoint:
    """Participation probability p and transmission probability q."""

    p: float
    q: float

    def __post_init__(self):
        for name in ("p", "q"):
            value = float(getattr(self, name))
            if not 0.0 <= value <= 1.0:
                raise InputError(f"{name} must lie in [0, 1], got {value}")
            object.__setattr__(self, name, value)

    def as_tuple(self) -> Tuple[float, float]:
        return (self.p, self.q)


@dataclass(frozen=True, eq=False)
class ReceptionVector:
    """Probabilities r_it to newly receive the information in exchange t."""

    r: np.ndarray
    t: Optional[int] = None


@dataclass(frozen=True)
class PIIContribution:
    """Likelihood contributions of the three observationally equivalent PII scenarios."""

    a: float
    b: float
    c: float = 1.0

    @classmethod
    def from_reception(cls, r: float, p: float) -> "PIIContribution":
        return cls(a=r * (1.0 - p), b=1.0 - r)

    @property
    def total(self) -> float:
        """a + b = 1 - p r."""
        return self.a + self.b


class Kind(Enum):
    FORMER_PARTICIPANT = "former_participant"
    NEW_PARTICIPANT = "new_participant"
    OUT_OF_REACH = "out_of_reach"
    PII = "pii"


class PIIState(Enum):
    FREE = "free"
    TRIMMED_A = "trimmed_a"
    TRIMMED_B = "trimmed_b"
    PREV_INFORMED = "prev_informed"


@dataclass(frozen=True)
class IndividualClass:
    kind: Kind
    pii_state: Optional[PIIState] = None


@dataclass(frozen=True, eq=False)
class Village:
    """One observed village: network, injection points and outcomes."""

    name: str
    network: VillageNetwork
    seeds: SeedVector
    outcomes: OutcomeMatrix

    def __post_init__(self):
        if not (self.network.n == self.seeds.n == self.outcomes.n):
            raise InputError(
                f"village {self.name}: network has {self.network.n} nodes, seed vector "
                f"{self.seeds.n}, outcome matrix {self.outcomes.n} rows")
        validate_village(self.network, self.seeds, self.outcomes, name=self.name)

    @property
    def n(self) -> int:
        return self.network.n

    @property
    def periods(self) -> int:
        return self.outcomes.periods

    def truncated(self, periods: int) -> "Village":
        return Village(self.name, self.network, self.seeds, self.outcomes.truncated(periods))


def validate_village(net: VillageNetwork, seeds: SeedVector, outcomes: OutcomeMatrix,
                     name: Optional[str] = None) -> None:
    """
    Reject outcome data that no information scenario can generate.

    Raises:
        InconsistentDataError: naming the first violating individual and period
    """
    y = outcomes.y
    early = np.flatnonzero(y[:, 0] & ~seeds.s0)
    if early.size:
        i = int(early[0]) + 1
        raise InconsistentDataError(
            f"individual {i} participates in period 1 without being an injection point",
            individual=i, period=1, village=name)
    dist = net.distances_from(seeds.ips)
    # period of first participation, 0 when never
    first = np.where(y.any(axis=1), y.argmax(axis=1) + 1, 0)
    unreachable = np.flatnonzero((first > 0) & (dist > first - 1))
    if unreachable.size:
        i = int(unreachable[0])
        raise InconsistentDataError(
            f"individual {i + 1} participates in period {first[i]} but is "
            f"{dist[i]:g} links away from the nearest injection point",
            individual=i + 1, period=int(first[i]), village=name)


def reception_from_counts(counts: np.ndarray, q: float) -> np.ndarray:
    """r = 1 - (1 - q)^k for k informed neighbours."""
    return 1.0 - np.power(1.0 - q, counts)


def reception_probabilities(net: VillageNetwork, status: ArrayLike, q: float,
                            t: Optional[int] = None) -> ReceptionVector:
    """
    Probability of every individual to newly receive the information.

    r_i = 1 - prod_j (1 - g_ij q s_j). Already informed individuals are not
    filtered out here.

    Args:
        net: Village network
        status: Binary informed-status vector of length n
        q: Transmission probability
        t: Optional exchange index carried on the result

    Returns:
        ReceptionVector
    """
    status = np.asarray(status)
    if status.ndim != 1 or status.shape[0] != net.n:
        raise InputError(f"status vector has shape {status.shape}, expected ({net.n},)")
    return ReceptionVector(reception_from_counts(net.informed_neighbor_counts(status), q), t)


def first_outcome_density(y1, s0, p: float):
    """P(Y_i1 = y | S_i0 = s0)."""
    y1 = np.asarray(y1, dtype=float)
    s0 = np.asarray(s0, dtype=float)
    return s0 * (y1 * p + (1 - y1) * (1 - p)) + (1 - s0) * (1 - y1)


def outcome_density(y_now, y_prev, s_prev, s_prev2, p: float):
    """P(Y_it | Y_i(t-1), S_i(t-1), S_i(t-2)) for t >= 2; accepts scalars or arrays."""
    y_now, y_prev, s_prev, s_prev2 = (np.asarray(v, dtype=float) for v in (y_now, y_prev, s_prev, s_prev2))
    newly = s_prev * (1 - s_prev2) * p
    return y_prev * y_now + (1 - y_prev) * y_now * newly + (1 - y_prev) * (1 - y_now) * (1 - newly)


def info_density(s_now, s_prev, r, y_now):
    """P(S_it | S_i(t-1), r_it, Y_it); accepts scalars or arrays."""
    s_now, s_prev, r, y_now = (np.asarray(v, dtype=float) for v in (s_now, s_prev, r, y_now))
    not_participant = (s_now * (1 - s_prev) * r
                       + (1 - s_now) * (1 - s_prev) * (1 - r)
                       + s_now * s_prev)
    return y_now * s_now + (1 - y_now) * not_participant


def classification_masks(y_prev: np.ndarray, y_now: np.ndarray, r_prev: np.ndarray,
                         previously_informed: np.ndarray) -> Dict[Kind, np.ndarray]:
    """Boolean masks of the four groups; the vectorised core of ``classify``."""
    former = y_prev.astype(bool)
    new = ~former & y_now.astype(bool)
    non_participant = ~y_now.astype(bool)
    out_of_reach = non_participant & (r_prev == 0) & ~previously_informed
    return {
        Kind.FORMER_PARTICIPANT: former,
        Kind.NEW_PARTICIPANT: new,
        Kind.OUT_OF_REACH: out_of_reach,
        Kind.PII: non_participant & ~out_of_reach,
    }


def classify(outcomes: OutcomeMatrix, t: int, r_prev: Union[ReceptionVector, ArrayLike],
             previously_informed: ArrayLike, strict: bool = True) -> List[IndividualClass]:
    """
    Classify every individual by its period-t likelihood contribution.

    Args:
        outcomes: Observed outcome matrix
        t: Period, 2 <= t <= T
        r_prev: Reception probabilities of the exchange preceding period t
        previously_informed: Informed-and-opted-out flags of the current scenario
        strict: Raise on new participants that cannot have been newly informed

    Returns:
        One IndividualClass per individual; PIIs start as FREE unless previously informed
    """
    if not 2 <= t <= outcomes.periods:
        raise InputError(f"period must lie in [2, {outcomes.periods}], got {t}")
    r = np.asarray(r_prev.r if isinstance(r_prev, ReceptionVector) else r_prev, dtype=float)
    informed = np.asarray(previously_informed, dtype=bool)
    masks = classification_masks(outcomes.period(t - 1), outcomes.period(t), r, informed)
    if strict:
        impossible = np.flatnonzero(masks[Kind.NEW_PARTICIPANT] & ((r == 0) | informed))
        if impossible.size:
            i = int(impossible[0]) + 1
            raise InconsistentDataError(
                f"individual {i} participates in period {t} but cannot have been newly informed",
                individual=i, period=t)
    classes = []
    for i in range(outcomes.n):
        kind = next(k for k, mask in masks.items() if mask[i])
        state = None
        if kind is Kind.PII:
            state = PIIState.PREV_INFORMED if informed[i] else PIIState.FREE
        classes.append(IndividualClass(kind, state))
    return classes


def trim_threshold(p: float) -> float:
    """Reception probability r* = 1 / (2 - p) at which scenarios A and B are equally likely."""
    return 1.0 / (2.0 - p)


def equivalence_curve(num_informed_links: int, q: float) -> float:
    """
    The p at which A and B are equally likely for a PII with the given number of informed links.

    Values below zero are returned as they are; callers clamp for display.
    """
    if num_informed_links < 1:
        raise InputError(f"num_informed_links must be at least 1, got {num_informed_links}")
    reach = 1.0 - (1.0 - q) ** num_informed_links
    with np.errstate(divide="ignore"):
        return float(2.0 - np.divide(1.0, reach))
