import heapq
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Dict, FrozenSet, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .graph import EdgeConfig, Graph, components
from .utils import CapExceededError, log_x

logger = logging.getLogger(__name__)

# Defaults (overridable via conf/base/parameters.yml).
DEFAULT_DIS_CAP = 12
DEFAULT_ORD_CAP = 10
# A vertex pulls in all its edges once 9 * (in-set incident edges) >= 5 * delta.
CLOSURE_NUM = 5
CLOSURE_DEN = 9


# ----------------------------- Polymer types ----------------------------- #

@dataclass(frozen=True)
class DisPolymer:
    """Connected subgraph (V', E') of G, the defect against A = empty."""

    vertices: Tuple[int, ...]
    edge_ids: Tuple[int, ...]
    kind: str = field(default="dis", init=False)

    @property
    def key(self) -> Tuple:
        return ("dis", self.edge_ids)

    @property
    def size(self) -> int:
        return len(self.edge_ids)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def q_exponent(self) -> int:
        return 1 - len(self.vertices)

    @property
    def x_exponent(self) -> int:
        return len(self.edge_ids)


@dataclass(frozen=True)
class OrdPolymer:
    """Labelled connected edge set fixed by the boundary closure of its unoccupied edges."""

    edge_ids: Tuple[int, ...]
    unoccupied: Tuple[int, ...]
    vertices: Tuple[int, ...]
    c_prime: int
    kind: str = field(default="ord", init=False)

    @property
    def key(self) -> Tuple:
        return ("ord", self.edge_ids, self.unoccupied)

    @property
    def size(self) -> int:
        return len(self.edge_ids)

    @property
    def labels(self) -> List[int]:
        """1 for occupied, 0 for unoccupied, aligned with edge_ids."""
        unocc = set(self.unoccupied)
        return [0 if e in unocc else 1 for e in self.edge_ids]

    @property
    def q_exponent(self) -> int:
        return self.c_prime

    @property
    def x_exponent(self) -> int:
        return -len(self.unoccupied)


Polymer = Union[DisPolymer, OrdPolymer]


def compatible(p1: Polymer, p2: Polymer) -> bool:
    """Polymers are compatible iff vertex disjoint (so never with themselves)."""
    return not set(p1.vertices).intersection(p2.vertices)


def edge_vertices(g: Graph, edge_ids: Iterable[int]) -> Tuple[int, ...]:
    verts = set()
    for e in edge_ids:
        verts.update(g.edges[e])
    return tuple(sorted(verts))


# ----------------------------- Weights ----------------------------- #

def w_dis(p: DisPolymer, q: float, beta: float) -> float:
    """Log-weight (1 - |gamma|) ln q + |E(gamma)| ln(e^beta - 1); -inf at beta = 0."""
    if beta < 0:
        raise ValueError(f"beta must be nonnegative, got {beta}")
    return p.q_exponent * math.log(q) + p.x_exponent * log_x(beta)


def w_ord(p: OrdPolymer, q: float, beta: float) -> float:
    """Log-weight c' ln q - |E_u| ln(e^beta - 1)."""
    if beta <= 0:
        raise ValueError(f"ordered weights need e^beta - 1 > 0, got beta={beta}")
    return p.q_exponent * math.log(q) + p.x_exponent * log_x(beta)


def _complex_log_weight(q_exp: int, x_exp: int, q: float, beta: complex) -> Tuple[float, float]:
    x = np.expm1(complex(beta))
    if x == 0:
        if x_exp > 0:
            return -math.inf, 0.0
        raise ValueError("weight undefined at e^beta - 1 = 0")
    log_modulus = q_exp * math.log(q) + x_exp * math.log(abs(x))
    phase = math.remainder(x_exp * np.angle(x), 2 * math.pi)
    return log_modulus, phase


def w_dis_complex(p: DisPolymer, q: float, beta: complex) -> Tuple[float, float]:
    """(log-modulus, phase) of the disordered weight at complex beta."""
    return _complex_log_weight(p.q_exponent, p.x_exponent, q, beta)


def w_ord_complex(p: OrdPolymer, q: float, beta: complex) -> Tuple[float, float]:
    return _complex_log_weight(p.q_exponent, p.x_exponent, q, beta)


def log_weight(p: Polymer, q: float, beta: float) -> float:
    return w_dis(p, q, beta) if p.kind == "dis" else w_ord(p, q, beta)


# ----------------------------- Boundary closure ----------------------------- #

def _is_heavy(count: int, delta: int) -> bool:
    return CLOSURE_DEN * count >= CLOSURE_NUM * delta


def boundary_closure(
    g: Graph, b0: Iterable[int], rng: Optional[np.random.Generator] = None
) -> FrozenSet[int]:
    """Grow b0 by all edges at vertices with >= 5 delta / 9 in-set incident edges, until stable.

    The fixed point does not depend on processing order; rng shuffles the
    work queue so that this can be checked.
    """
    current = set(int(e) for e in b0)
    counts: Dict[int, int] = {}
    for e in current:
        for v in g.edges[e]:
            counts[v] = counts.get(v, 0) + 1
    pending = [v for v, c in counts.items() if _is_heavy(c, g.delta)]
    if rng is not None:
        rng.shuffle(pending)
    saturated = set()
    while pending:
        v = pending.pop() if rng is None else pending.pop(int(rng.integers(len(pending))))
        if v in saturated:
            continue
        saturated.add(v)
        for u, e in g.adjacency[v]:
            if e in current:
                continue
            current.add(e)
            counts[v] = counts.get(v, 0) + 1
            counts[u] = counts.get(u, 0) + 1
            if u not in saturated and _is_heavy(counts[u], g.delta):
                pending.append(u)
    return frozenset(current)


# ----------------------------- Connected edge sets ----------------------------- #

def enumerate_connected_edge_sets(
    g: Graph,
    max_edges: int,
    root_cap: Optional[Callable[[int], int]] = None,
) -> Iterator[Tuple[int, ...]]:
    """Connected edge sets with 1..max_edges edges, each yielded exactly once.

    Extension-set enumeration over the line graph: a set is generated only from
    its minimum edge id, and extensions never revisit an edge adjacent to the
    set built so far. root_cap(e) optionally lowers the size bound for sets
    whose minimum edge is e.
    """
    nbrs = g.edge_neighbors

    def extend(current: List[int], extension: List[int], excluded: set, root: int, limit: int):
        yield tuple(sorted(current))
        if len(current) == limit:
            return
        extension = list(extension)
        while extension:
            w = extension.pop()
            new_ext = list(extension)
            new_excluded = set(excluded)
            for u in nbrs[w]:
                if u > root and u not in new_excluded:
                    new_ext.append(u)
                    new_excluded.add(u)
            current.append(w)
            yield from extend(current, new_ext, new_excluded, root, limit)
            current.pop()

    for root in range(g.n_edges):
        limit = max_edges if root_cap is None else min(max_edges, root_cap(root))
        if limit < 1:
            continue
        ext = [u for u in nbrs[root] if u > root]
        yield from extend([root], ext, {root, *ext}, root, limit)


def enumerate_dis_polymers(
    g: Graph, m: int, cap: int = DEFAULT_DIS_CAP, root_cap: Optional[Callable[[int], int]] = None
) -> List[DisPolymer]:
    """All connected subgraphs with 1..m edges."""
    if m > cap:
        raise CapExceededError(f"disordered polymers limited to m <= {cap}, got {m}")
    polymers = [
        DisPolymer(vertices=edge_vertices(g, s), edge_ids=s)
        for s in enumerate_connected_edge_sets(g, m, root_cap)
    ]
    logger.debug(f"{len(polymers)} disordered polymers with <= {m} edges on {g}")
    return polymers


# ----------------------------- c' ----------------------------- #

def _explore_piece(g: Graph, start: int, removed: set) -> Tuple[set, bool]:
    """Explore the component of start in (V, E minus removed); (visited, is_small).

    Stops early once the piece is known to be large: it reaches a boundary mark
    or, without marks, half the vertices.
    """
    visited = {start}
    if g.boundary_marks:
        dist = g.boundary_distance
        heap = [(dist[start], start)]
        while heap:
            _, x = heapq.heappop(heap)
            if x in g.boundary_marks:
                return visited, False
            for y, e in g.adjacency[x]:
                if e not in removed and y not in visited:
                    visited.add(y)
                    heapq.heappush(heap, (dist[y], y))
        return visited, True
    queue = deque([start])
    while queue:
        x = queue.popleft()
        for y, e in g.adjacency[x]:
            if e not in removed and y not in visited:
                visited.add(y)
                if 2 * len(visited) >= g.n:
                    return visited, False
                queue.append(y)
    return visited, 2 * len(visited) < g.n


def _base_small_components(g: Graph) -> Tuple[List[int], List[bool]]:
    labels, c = g.base_components
    if g.boundary_marks:
        small = [True] * c
        for b in g.boundary_marks:
            small[labels[b]] = False
    else:
        sizes = np.bincount(np.asarray(labels, dtype=np.int64), minlength=c)
        small = [bool(2 * s < g.n) for s in sizes]
    return labels, small


def c_prime(g: Graph, e_u: Iterable[int]) -> int:
    """Number of small components of (V, E minus e_u).

    Small means fewer than n/2 vertices, or, on boundary-marked graphs,
    containing no boundary vertex.
    """
    removed = set(int(e) for e in e_u)
    labels, small = _base_small_components(g)
    endpoints = sorted({v for e in removed for v in g.edges[e]})
    touched = {labels[v] for v in endpoints}
    count = sum(1 for comp, is_small in enumerate(small) if is_small and comp not in touched)
    seen = set()
    for v in endpoints:
        if v in seen:
            continue
        visited, is_small = _explore_piece(g, v, removed)
        seen |= visited
        if is_small:
            count += 1
    return count


def factorization_holds(g: Graph, family: Sequence[OrdPolymer]) -> bool:
    """c(E minus all E_u) == 1 + sum of c' over a compatible ordered family."""
    removed = set()
    for p in family:
        removed.update(p.unoccupied)
    kept = EdgeConfig.from_edge_ids((e for e in range(g.n_edges) if e not in removed), g.n_edges)
    _, c = components(g, kept)
    return c == 1 + sum(p.c_prime for p in family)


# ----------------------------- Ordered polymers ----------------------------- #

def _ord_candidates(g: Graph, s: Tuple[int, ...]) -> Iterator[Tuple[int, ...]]:
    """Unoccupied sets U within s that could close to exactly s.

    Edges of s touching no heavy vertex of s can only be in the closure if
    they are in U already, so they are forced unoccupied.
    """
    counts: Dict[int, int] = {}
    for e in s:
        for v in g.edges[e]:
            counts[v] = counts.get(v, 0) + 1
    heavy = {v for v, c in counts.items() if _is_heavy(c, g.delta)}
    forced = [e for e in s if not (set(g.edges[e]) & heavy)]
    optional = [e for e in s if set(g.edges[e]) & heavy]
    for r in range(len(optional) + 1):
        for extra in combinations(optional, r):
            u = tuple(sorted(forced + list(extra)))
            if u:
                yield u


def enumerate_ord_polymers(
    g: Graph, m: int, cap: int = DEFAULT_ORD_CAP, root_cap: Optional[Callable[[int], int]] = None
) -> List[OrdPolymer]:
    """All labelled connected edge sets (gamma, E_u) with |gamma| <= m and closure(E_u) = gamma."""
    if m > cap:
        raise CapExceededError(f"ordered polymers limited to m <= {cap}, got {m}")
    polymers = []
    for s in enumerate_connected_edge_sets(g, m, root_cap):
        target = frozenset(s)
        if boundary_closure(g, s) != target:
            continue
        for u in _ord_candidates(g, s):
            if boundary_closure(g, u) != target:
                continue
            if len(s) > 10 * len(u):
                raise AssertionError(f"closure bound violated: |gamma|={len(s)}, |E_u|={len(u)}")
            polymers.append(
                OrdPolymer(edge_ids=s, unoccupied=u, vertices=edge_vertices(g, s), c_prime=c_prime(g, u))
            )
    logger.debug(f"{len(polymers)} ordered polymers with <= {m} edges on {g}")
    return polymers


# ----------------------------- Arena ----------------------------- #

class PolymerArena:
    """Deduplicated polymers with dense ids and a vertex index for incompatibility.

    Args:
        polymers: Polymers of one kind. Duplicates (same key) are merged.
        graph: Owning graph, needed for tail bounds and model weights.
        log_weights: Explicit log-weights for synthetic arenas; otherwise
            weights come from the model at evaluation time.
    """

    def __init__(
        self,
        polymers: Iterable[Polymer],
        graph: Optional[Graph] = None,
        log_weights: Optional[Sequence[float]] = None,
    ):
        self.graph = graph
        self.polymers: List[Polymer] = []
        self.index: Dict[Tuple, int] = {}
        for p in polymers:
            if p.key not in self.index:
                self.index[p.key] = len(self.polymers)
                self.polymers.append(p)
        kinds = {p.kind for p in self.polymers}
        if len(kinds) > 1:
            raise ValueError(f"arena mixes polymer kinds {sorted(kinds)}")
        self.kind = kinds.pop() if kinds else None
        self.fixed_log_weights = None
        if log_weights is not None:
            if len(log_weights) != len(self.polymers):
                raise ValueError("log_weights must align with the deduplicated polymers")
            self.fixed_log_weights = np.asarray(log_weights, dtype=float)
        self.by_vertex: Dict[int, List[int]] = {}
        for i, p in enumerate(self.polymers):
            for v in p.vertices:
                self.by_vertex.setdefault(v, []).append(i)
        self.sizes = [p.size for p in self.polymers]
        self._incompatible: Dict[int, FrozenSet[int]] = {}

    def __len__(self) -> int:
        return len(self.polymers)

    def incompatible(self, i: int) -> FrozenSet[int]:
        """Ids sharing a vertex with polymer i (including i)."""
        found = self._incompatible.get(i)
        if found is None:
            found = frozenset(j for v in self.polymers[i].vertices for j in self.by_vertex[v])
            self._incompatible[i] = found
        return found

    def containing(self, v: int) -> List[int]:
        return list(self.by_vertex.get(v, []))

    def exponents(self) -> Tuple[np.ndarray, np.ndarray]:
        """Per-polymer (q-exponent, x-exponent) of the model weight."""
        return (
            np.array([p.q_exponent for p in self.polymers], dtype=np.int64),
            np.array([p.x_exponent for p in self.polymers], dtype=np.int64),
        )

    def log_weights(self, q: Optional[float] = None, beta: Optional[float] = None) -> np.ndarray:
        if self.fixed_log_weights is not None:
            return self.fixed_log_weights
        if q is None or beta is None:
            raise ValueError("q and beta are required for model weights")
        return np.array([log_weight(p, q, beta) for p in self.polymers], dtype=float)

    def records(self, q: float, beta: float) -> Iterator[Dict]:
        """JSON-ready rows: kind, edges, labels (1 occupied / 0 unoccupied), log_w."""
        for p, lw in zip(self.polymers, self.log_weights(q, beta)):
            labels = p.labels if p.kind == "ord" else [1] * p.size
            yield {"kind": p.kind, "edges": list(p.edge_ids), "labels": labels, "log_w": float(lw)}


def polymer_arena(
    g: Graph, model: str, m: int, root_cap: Optional[Callable[[int], int]] = None, **caps
) -> PolymerArena:
    """Enumerate the model's polymers with at most m edges into an arena."""
    if model == "dis":
        polymers = enumerate_dis_polymers(g, m, root_cap=root_cap, **caps)
    elif model == "ord":
        polymers = enumerate_ord_polymers(g, m, root_cap=root_cap, **caps)
    else:
        raise ValueError(f"model must be 'dis' or 'ord', got {model!r}")
    return PolymerArena(polymers, graph=g)
