import logging
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, cpu_count, delayed
from pydantic import BaseModel, ConfigDict
from scipy.special import logsumexp

from .graph import Graph
from .polymers import PolymerArena, polymer_arena
from .utils import BudgetExceededError, CapExceededError, log_x

logger = logging.getLogger(__name__)

# Defaults (overridable via conf/base/parameters.yml).
DEFAULT_BUDGET = 10_000_000

# Enumeration limits.
DEFAULT_URSELL_CAP = 10
DEFAULT_XI_BRUTE_CAP = 25
# Workers over anchor polymers.
DEFAULT_N_JOBS = 1


# ----------------------------- Ursell function ----------------------------- #

def _adjacency_masks(n: int, edges: Iterable[Tuple[int, int]]) -> List[int]:
    adj = [0] * n
    for u, v in edges:
        if u == v:
            raise ValueError("Ursell graphs have no loops")
        adj[u] |= 1 << v
        adj[v] |= 1 << u
    return adj


@lru_cache(maxsize=65536)
def _signed_sum_masks(n: int, adj: Tuple[int, ...]) -> int:
    full = (1 << n) - 1
    independent = [True] * (full + 1)
    for x in range(1, full + 1):
        low = x & -x
        v = low.bit_length() - 1
        independent[x] = independent[x ^ low] and not (adj[v] & x)
    connected = [0] * (full + 1)
    for x in range(1, full + 1):
        low = x & -x
        rest = x ^ low
        total = 1 if independent[x] else 0
        if rest:
            z = (rest - 1) & rest
            while True:
                y = low | z
                if independent[x ^ y]:
                    total -= connected[y]
                if z == 0:
                    break
                z = (z - 1) & rest
        connected[x] = total
    return connected[full]


def connected_signed_sum(n: int, edges: Iterable[Tuple[int, int]], cap: int = DEFAULT_URSELL_CAP) -> int:
    """Sum of (-1)^|A| over spanning connected edge subsets A of the graph.

    Computed from the recursion F(X) = sum over Y containing min(X) of
    C(Y) F(X minus Y), where F(X) is 1 iff X spans no edge.
    """
    if n > cap:
        raise CapExceededError(f"Ursell function limited to {cap} vertices, got {n}")
    if n == 0:
        return 0
    return _signed_sum_masks(n, tuple(_adjacency_masks(n, edges)))


def ursell_exact(n: int, edges: Iterable[Tuple[int, int]], cap: int = DEFAULT_URSELL_CAP) -> Fraction:
    return Fraction(connected_signed_sum(n, edges, cap), math.factorial(n))


def ursell(n: int, edges: Iterable[Tuple[int, int]], cap: int = DEFAULT_URSELL_CAP) -> float:
    return float(ursell_exact(n, edges, cap))


# ----------------------------- Clusters ----------------------------- #

@dataclass(frozen=True)
class Cluster:
    """A multiset of polymers with connected incompatibility graph.

    coefficient is multiplicity * ursell, the factor multiplying the product of
    weights when the ordered-tuple sum is collapsed to this representative.
    """

    polymer_ids: Tuple[int, ...]
    size: int
    ursell: Fraction
    multiplicity: int
    n_sites: int

    @property
    def coefficient(self) -> Fraction:
        return self.ursell * self.multiplicity

    def log_abs_weight(self, log_weights: np.ndarray) -> float:
        return float(sum(log_weights[i] for i in self.polymer_ids))

    def sign(self) -> int:
        return 1 if self.ursell > 0 else -1


def _make_cluster(arena: PolymerArena, ids: Tuple[int, ...], cap: int) -> Cluster:
    k = len(ids)
    edges = []
    for a in range(k):
        incompatible = arena.incompatible(ids[a])
        for b in range(a + 1, k):
            if ids[b] in incompatible:
                edges.append((a, b))
    multiplicity = math.factorial(k)
    for count in Counter(ids).values():
        multiplicity //= math.factorial(count)
    sites = set()
    for i in set(ids):
        sites.update(arena.polymers[i].vertices)
    return Cluster(
        polymer_ids=ids,
        size=sum(arena.sizes[i] for i in ids),
        ursell=ursell_exact(k, edges, cap),
        multiplicity=multiplicity,
        n_sites=len(sites),
    )


def _anchor_clusters(
    arena: PolymerArena, anchor: int, m: int, pinned: Optional[frozenset], min_id_pool: str,
) -> Iterator[Tuple[int, ...]]:
    """Connected multisets whose distinguished member is anchor.

    Unpinned: anchor is the smallest id. Pinned: anchor is the smallest id
    among members in the pinned set.
    """
    sizes = arena.sizes
    if sizes[anchor] >= m:
        return

    def allowed(j: int) -> bool:
        if min_id_pool == "all":
            return j >= anchor
        return j >= anchor or j not in pinned

    start = (anchor,)
    seen = {start}
    stack = [start]
    while stack:
        cl = stack.pop()
        yield cl
        total = sum(sizes[i] for i in cl)
        candidates = set()
        for i in set(cl):
            candidates |= arena.incompatible(i)
        for j in sorted(candidates):
            if not allowed(j) or total + sizes[j] >= m:
                continue
            new = tuple(sorted(cl + (j,)))
            if new not in seen:
                seen.add(new)
                stack.append(new)


def _anchors(arena: PolymerArena, root: Optional[int]) -> Tuple[List[int], Optional[frozenset], str]:
    if root is None:
        return list(range(len(arena))), None, "all"
    pinned = frozenset(arena.containing(root))
    return sorted(pinned), pinned, "pinned"


def enumerate_clusters(
    arena: PolymerArena,
    m: int,
    root: Optional[int] = None,
    budget: int = DEFAULT_BUDGET,
    ursell_cap: int = DEFAULT_URSELL_CAP,
    min_size: int = 0,
) -> Iterator[Cluster]:
    """All clusters with total size min_size <= size < m, as multiset representatives.

    Each representative is produced exactly once: growth starts from an anchor
    and only adds polymers incompatible with a current member, never ones
    smaller than the anchor. With root set, only clusters with a polymer
    containing that vertex are produced.
    """
    anchors, pinned, pool = _anchors(arena, root)
    produced = 0
    for anchor in anchors:
        for ids in _anchor_clusters(arena, anchor, m, pinned, pool):
            produced += 1
            if produced > budget:
                raise BudgetExceededError(f"more than {budget} clusters below size {m}")
            cluster = _make_cluster(arena, ids, ursell_cap)
            if cluster.size >= min_size:
                yield cluster


# ----------------------------- Series ----------------------------- #

@dataclass
class ClusterSeries:
    """Truncated expansion as a Laurent polynomial in q and x = e^beta - 1.

    Every polymer weight is a monomial q^a x^b, so clusters collapse to exact
    rational coefficients per monomial and can be evaluated at any (q, beta)
    without enumerating again.
    """

    m: int
    terms: Dict[Tuple[int, int], Fraction]
    n_clusters: int
    weighting: str = "plain"

    def evaluate(self, q: float, beta: float) -> float:
        lq = math.log(q)
        lx = log_x(beta)
        values = []
        for (a, b), coef in self.terms.items():
            if coef == 0:
                continue
            if b == 0:
                values.append(float(coef) * math.exp(a * lq))
            elif lx == -math.inf:
                if b < 0:
                    raise ValueError("series has negative x powers; beta must be positive")
            else:
                values.append(float(coef) * math.exp(a * lq + b * lx))
        return math.fsum(values)

    def merge(self, other: "ClusterSeries") -> "ClusterSeries":
        terms = dict(self.terms)
        for key, coef in other.terms.items():
            terms[key] = terms.get(key, Fraction(0)) + coef
        return ClusterSeries(self.m, terms, self.n_clusters + other.n_clusters, self.weighting)


def _series_for_anchors(
    arena: PolymerArena, anchors: Sequence[int], m: int, pinned, pool: str, weighting: str,
    budget: int, ursell_cap: int, min_size: int,
) -> ClusterSeries:
    q_exp, x_exp = arena.exponents()
    terms: Dict[Tuple[int, int], Fraction] = {}
    count = 0
    for anchor in anchors:
        for ids in _anchor_clusters(arena, anchor, m, pinned, pool):
            count += 1
            if count > budget:
                raise BudgetExceededError(f"more than {budget} clusters below size {m}")
            cluster = _make_cluster(arena, ids, ursell_cap)
            if cluster.size < min_size:
                continue
            coef = cluster.coefficient
            if weighting == "site":
                coef = coef / cluster.n_sites
            key = (int(sum(q_exp[i] for i in ids)), int(sum(x_exp[i] for i in ids)))
            terms[key] = terms.get(key, Fraction(0)) + coef
    return ClusterSeries(m=m, terms=terms, n_clusters=count, weighting=weighting)


def cluster_series(
    arena: PolymerArena,
    m: int,
    root: Optional[int] = None,
    weighting: str = "plain",
    budget: int = DEFAULT_BUDGET,
    ursell_cap: int = DEFAULT_URSELL_CAP,
    min_size: int = 0,
    n_jobs: int = DEFAULT_N_JOBS,
) -> ClusterSeries:
    """Aggregate all clusters of size < m into a ClusterSeries.

    weighting="site" divides each cluster by the number of distinct vertices it
    covers (per-site free energy); "plain" keeps the bare cluster weight.
    Anchors are split across joblib workers and merged in anchor order.
    """
    if weighting not in ("plain", "site"):
        raise ValueError(f"weighting must be 'plain' or 'site', got {weighting!r}")
    anchors, pinned, pool = _anchors(arena, root)
    if n_jobs == 1 or len(anchors) < 2:
        series = _series_for_anchors(arena, anchors, m, pinned, pool, weighting, budget, ursell_cap, min_size)
    else:
        workers = n_jobs if n_jobs > 0 else cpu_count()
        chunks = [list(c) for c in np.array_split(np.asarray(anchors), min(len(anchors), 4 * workers)) if len(c)]
        parts = Parallel(n_jobs=n_jobs)(
            delayed(_series_for_anchors)(arena, [int(a) for a in chunk], m, pinned, pool, weighting, budget,
                                         ursell_cap, min_size)
            for chunk in chunks
        )
        series = ClusterSeries(m=m, terms={}, n_clusters=0, weighting=weighting)
        for part in parts:
            series = series.merge(part)
        if series.n_clusters > budget:
            raise BudgetExceededError(f"more than {budget} clusters below size {m}")
    logger.info(f"cluster series: {series.n_clusters} clusters below size {m}, {len(series.terms)} monomials")
    return series


def cluster_sum(
    arena: PolymerArena, log_weights: np.ndarray, m: int, root: Optional[int] = None,
    budget: int = DEFAULT_BUDGET, weighting: str = "plain",
) -> float:
    """Direct sum of coefficient * prod(w) over clusters, for arbitrary weights."""
    values = []
    for cluster in enumerate_clusters(arena, m, root=root, budget=budget):
        log_w = cluster.log_abs_weight(log_weights)
        if log_w == -math.inf:
            continue
        coef = cluster.coefficient / cluster.n_sites if weighting == "site" else cluster.coefficient
        values.append(float(coef) * math.exp(log_w))
    return math.fsum(values)


class TruncatedSeries(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    m: int
    value: float
    tail_bound: float
    model: Optional[str]
    n_clusters: int = 0


def tail_bound(n: int, q: float, delta: int, m: int) -> float:
    """n q^(-m / (200 delta))."""
    return n * math.exp(-m * math.log(q) / (200 * delta))


def truncated_log_xi(
    arena: PolymerArena,
    q: float,
    beta: float,
    m: int,
    model: Optional[str] = None,
    budget: int = DEFAULT_BUDGET,
    n_jobs: int = DEFAULT_N_JOBS,
    series: Optional[ClusterSeries] = None,
) -> TruncatedSeries:
    """T_m: the cluster expansion of log Xi over clusters of size < m.

    Arenas with fixed log-weights are summed directly; model arenas go through
    the (cacheable) ClusterSeries.
    """
    model = model or arena.kind
    if arena.graph is not None:
        bound = tail_bound(arena.graph.n, q, arena.graph.delta, m)
    else:
        bound = math.inf
    if len(arena) == 0:
        return TruncatedSeries(m=m, value=0.0, tail_bound=bound, model=model)
    if arena.fixed_log_weights is not None:
        value = cluster_sum(arena, arena.fixed_log_weights, m, budget=budget)
        return TruncatedSeries(m=m, value=value, tail_bound=bound, model=model)
    if model == "dis" and beta == 0:
        return TruncatedSeries(m=m, value=0.0, tail_bound=bound, model=model)
    if series is None:
        series = cluster_series(arena, m, budget=budget, n_jobs=n_jobs)
    return TruncatedSeries(
        m=m, value=series.evaluate(q, beta), tail_bound=bound, model=model, n_clusters=series.n_clusters
    )


# ----------------------------- Brute force ----------------------------- #

def xi_brute(
    arena: PolymerArena,
    q: Optional[float] = None,
    beta: Optional[float] = None,
    cap: int = DEFAULT_XI_BRUTE_CAP,
) -> float:
    """log Xi: sum over pairwise-compatible polymer subsets, in log space."""
    if len(arena) > cap:
        raise CapExceededError(f"brute-force Xi limited to {cap} polymers, got {len(arena)}")
    if len(arena) == 0:
        return 0.0
    log_w = arena.log_weights(q, beta)
    terms: List[float] = []

    def walk(i: int, blocked: frozenset, acc: float):
        if i == len(arena):
            terms.append(acc)
            return
        walk(i + 1, blocked, acc)
        if i not in blocked and log_w[i] > -math.inf:
            walk(i + 1, blocked | arena.incompatible(i), acc + log_w[i])

    walk(0, frozenset(), 0.0)
    return float(logsumexp(terms))


# ----------------------------- Kotecky-Preiss audit ----------------------------- #

class KPReport(BaseModel):
    holds_up_to_m: bool
    worst_ratio: float
    worst_vertex: Optional[int]
    worst_polymer_ratio: float
    polymer_form_holds: bool
    r: float
    audited_size: int
    model: str
    partial: bool = True


def default_kp_rate(q: float, delta: int, model: str) -> float:
    if model == "dis":
        return math.log(q) / (4 * delta)
    return math.log(q) / (200 * delta)


def kp_check(
    g: Graph,
    q: float,
    beta: float,
    model: str,
    r: Optional[float] = None,
    m: int = 4,
    arena: Optional[PolymerArena] = None,
) -> KPReport:
    """Truncated Kotecky-Preiss audit over polymers with at most m edges.

    Per-vertex form: sum over gamma containing v of e^((1+r)|E(gamma)|) |w| <= 1/2.
    Per-polymer form: sum over gamma' incompatible with gamma of
    |w'| e^((1+r)|E(gamma')|) <= |E(gamma)|. Both are partial certificates.
    """
    r = default_kp_rate(q, g.delta, model) if r is None else r
    if arena is None:
        arena = polymer_arena(g, model, m)
    if model == "dis" and beta == 0:
        decorated = np.zeros(len(arena))
    else:
        log_w = arena.log_weights(q, beta)
        decorated = np.exp(log_w + (1 + r) * np.asarray(arena.sizes, dtype=float)) if len(arena) else np.zeros(0)
    worst, worst_vertex = 0.0, None
    for v in range(g.n):
        total = math.fsum(decorated[i] for i in arena.containing(v))
        if worst_vertex is None or total > worst:
            worst, worst_vertex = total, v
    worst_polymer = 0.0
    for i in range(len(arena)):
        total = math.fsum(decorated[j] for j in arena.incompatible(i))
        worst_polymer = max(worst_polymer, total / arena.sizes[i])
    report = KPReport(
        holds_up_to_m=worst <= 0.5,
        worst_ratio=worst,
        worst_vertex=worst_vertex,
        worst_polymer_ratio=worst_polymer,
        polymer_form_holds=worst_polymer <= 1.0,
        r=r,
        audited_size=m,
        model=model,
    )
    if not report.holds_up_to_m:
        logger.warning(f"KP audit ({model}, m={m}) fails: worst per-vertex sum {worst:.4g} at vertex {worst_vertex}")
    return report
