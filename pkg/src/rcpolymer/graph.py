import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse
import scipy.sparse.linalg
from pydantic import BaseModel, ValidationError, field_validator

from .utils import BudgetExceededError, CapExceededError, load_catalog, resolve_path

logger = logging.getLogger(__name__)

# Defaults (overridable via conf/base/parameters.yml).
DEFAULT_EXACT_CAP = 24
DEFAULT_SMALL_SET_CAP = 8
DEFAULT_T_HALF = 0.1
DEFAULT_T_SMALL = 5 / 9
DEFAULT_REJECTION_BUDGET = 1_000_000

# Longest cycle the DFS enumeration accepts.
DEFAULT_CYCLE_K_MAX = 12

# Dense eigensolver below this many vertices.
_DENSE_SPECTRUM_MAX = 400
# Masks per vectorized batch in the exact expansion profile.
_PROFILE_BATCH = 1 << 16


class GraphFormatError(ValueError):
    """A graph file could not be parsed or violates simplicity/regularity."""


class UnionFind:
    """Disjoint sets with path compression, used for component labelling."""

    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, x: int, y: int) -> bool:
        rx, ry = self.find(x), self.find(y)
        if rx == ry:
            return False
        if rx < ry:
            self.parent[ry] = rx
        else:
            self.parent[rx] = ry
        return True


@dataclass(frozen=True)
class EdgeConfig:
    """An edge subset A of a graph with n_edges edges, stored as an int bitmask."""

    bits: int
    n_edges: int

    def __post_init__(self):
        if self.bits < 0 or self.bits >> self.n_edges:
            raise ValueError(f"bitmask {self.bits:#x} does not fit {self.n_edges} edges")

    @classmethod
    def empty(cls, n_edges: int) -> "EdgeConfig":
        return cls(0, n_edges)

    @classmethod
    def full(cls, n_edges: int) -> "EdgeConfig":
        return cls((1 << n_edges) - 1, n_edges)

    @classmethod
    def from_edge_ids(cls, edge_ids: Iterable[int], n_edges: int) -> "EdgeConfig":
        bits = 0
        for e in edge_ids:
            bits |= 1 << int(e)
        return cls(bits, n_edges)

    @classmethod
    def from_array(cls, present: np.ndarray) -> "EdgeConfig":
        present = np.asarray(present, dtype=bool)
        packed = np.packbits(present, bitorder="little").tobytes()
        return cls(int.from_bytes(packed, "little"), len(present))

    @classmethod
    def from_hex(cls, text: str, n_edges: int) -> "EdgeConfig":
        return cls(int(text, 16), n_edges)

    def __contains__(self, edge_id: int) -> bool:
        return bool((self.bits >> edge_id) & 1)

    def count(self) -> int:
        return bin(self.bits).count("1")

    def edge_ids(self) -> List[int]:
        return [e for e in range(self.n_edges) if (self.bits >> e) & 1]

    def to_array(self) -> np.ndarray:
        n_bytes = max(1, (self.n_edges + 7) // 8)
        raw = np.frombuffer(self.bits.to_bytes(n_bytes, "little"), dtype=np.uint8)
        return np.unpackbits(raw, bitorder="little")[: self.n_edges].astype(bool)

    def with_edge(self, edge_id: int) -> "EdgeConfig":
        return EdgeConfig(self.bits | (1 << edge_id), self.n_edges)

    def without_edge(self, edge_id: int) -> "EdgeConfig":
        return EdgeConfig(self.bits & ~(1 << edge_id), self.n_edges)

    def to_hex(self) -> str:
        return format(self.bits, "x")


class Graph:
    """Simple undirected graph with dense vertex ids and stable edge ids.

    Args:
        n: Vertex count.
        edges: Vertex pairs; edge i gets id i.
        delta: Declared degree. Defaults to the maximum degree.
        boundary_marks: Vertices flagged as boundary (tree truncations).
    """

    def __init__(
        self,
        n: int,
        edges: Sequence[Tuple[int, int]],
        delta: Optional[int] = None,
        boundary_marks: Optional[Iterable[int]] = None,
    ):
        if n < 0:
            raise ValueError("vertex count must be nonnegative")
        self.n = int(n)
        normalized = []
        seen = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u}, {v}) out of range for n={n}")
            if u == v:
                raise ValueError(f"loop at vertex {u}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise ValueError(f"parallel edge {key}")
            seen.add(key)
            normalized.append(key)
        self.edges: Tuple[Tuple[int, int], ...] = tuple(normalized)
        self.edge_index: Dict[Tuple[int, int], int] = {e: i for i, e in enumerate(self.edges)}
        self.adjacency: List[List[Tuple[int, int]]] = [[] for _ in range(self.n)]
        for i, (u, v) in enumerate(self.edges):
            self.adjacency[u].append((v, i))
            self.adjacency[v].append((u, i))
        max_degree = max((len(a) for a in self.adjacency), default=0)
        self.delta = int(delta) if delta is not None else max_degree
        self.boundary_marks: FrozenSet[int] = frozenset(int(b) for b in (boundary_marks or ()))

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, |E|={self.n_edges}, delta={self.delta})"

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def neighbors(self, v: int) -> List[int]:
        return [u for u, _ in self.adjacency[v]]

    def incident_edges(self, v: int) -> List[int]:
        return [e for _, e in self.adjacency[v]]

    @property
    def is_regular(self) -> bool:
        return all(
            self.degree(v) == self.delta for v in range(self.n) if v not in self.boundary_marks
        )

    @cached_property
    def endpoints(self) -> Tuple[np.ndarray, np.ndarray]:
        """Edge endpoint arrays (us, vs) indexed by edge id."""
        if not self.edges:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        arr = np.asarray(self.edges, dtype=np.int64)
        return arr[:, 0].copy(), arr[:, 1].copy()

    @cached_property
    def edge_neighbors(self) -> List[List[int]]:
        """Line-graph adjacency: edges sharing an endpoint with each edge."""
        out = []
        for i, (u, v) in enumerate(self.edges):
            nbrs = {e for _, e in self.adjacency[u]} | {e for _, e in self.adjacency[v]}
            nbrs.discard(i)
            out.append(sorted(nbrs))
        return out

    @cached_property
    def base_components(self) -> Tuple[List[int], int]:
        """Component labels of the full graph."""
        return components(self, EdgeConfig.full(self.n_edges))

    @cached_property
    def boundary_distance(self) -> List[float]:
        """Graph distance from each vertex to the nearest boundary mark."""
        dist = [math.inf] * self.n
        queue = deque()
        for b in self.boundary_marks:
            dist[b] = 0
            queue.append(b)
        while queue:
            x = queue.popleft()
            for y, _ in self.adjacency[x]:
                if dist[y] == math.inf:
                    dist[y] = dist[x] + 1
                    queue.append(y)
        return dist

    def distances_from(self, root: int) -> List[float]:
        dist = [math.inf] * self.n
        dist[root] = 0
        queue = deque([root])
        while queue:
            x = queue.popleft()
            for y, _ in self.adjacency[x]:
                if dist[y] == math.inf:
                    dist[y] = dist[x] + 1
                    queue.append(y)
        return dist

    def adjacency_matrix(self) -> scipy.sparse.csr_matrix:
        us, vs = self.endpoints
        data = np.ones(2 * len(us))
        rows = np.concatenate([us, vs])
        cols = np.concatenate([vs, us])
        return scipy.sparse.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))

    def to_dict(self) -> Dict:
        return {"n": self.n, "delta": self.delta, "edges": [list(e) for e in sorted(self.edges)]}


# ----------------------------- JSON I/O ----------------------------- #

class GraphFile(BaseModel):
    n: int
    delta: int
    edges: List[Tuple[int, int]]

    @field_validator("n", "delta")
    @classmethod
    def _nonnegative(cls, value: int) -> int:
        if value < 0:
            raise ValueError("must be nonnegative")
        return value


def graph_from_dict(payload: Dict) -> Graph:
    try:
        parsed = GraphFile.model_validate(payload)
        g = Graph(parsed.n, parsed.edges, delta=parsed.delta)
    except (ValidationError, ValueError) as e:
        raise GraphFormatError(f"invalid graph: {e}") from e
    if not g.is_regular:
        bad = [v for v in range(g.n) if g.degree(v) != g.delta][:5]
        raise GraphFormatError(f"graph is not {g.delta}-regular (e.g. vertices {bad})")
    return g


def load_graph(path: str) -> Graph:
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except json.JSONDecodeError as e:
        raise GraphFormatError(f"{path}: malformed JSON ({e})") from e
    return graph_from_dict(payload)


def write_graph(g: Graph, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(graph_to_json(g))
        f.write("\n")


def graph_to_json(g: Graph) -> str:
    """Canonical serialization: sorted edges, fixed key order."""
    return json.dumps(g.to_dict())


def load_named_graph(name: str) -> Graph:
    """Load a graph fixture registered in conf/base/catalog.yml."""
    catalog = load_catalog()
    entry = catalog["graphs"].get(name)
    if entry is None:
        raise KeyError(f"graph '{name}' not in catalog; known: {sorted(catalog['graphs'])}")
    return load_graph(resolve_path(entry["file_path"]))


# ----------------------------- Generation ----------------------------- #

def random_regular(
    n: int, delta: int, seed: Optional[int] = None, max_attempts: int = DEFAULT_REJECTION_BUDGET
) -> Graph:
    """Random delta-regular simple graph from the configuration model.

    Stubs are paired by a uniform shuffle; pairings with loops or parallel
    edges are rejected in full and redrawn.
    """
    if (n * delta) % 2 != 0:
        raise ValueError(f"n * delta must be even (n={n}, delta={delta})")
    if n <= delta:
        raise ValueError(f"need n > delta (n={n}, delta={delta})")
    if delta == 0:
        return Graph(n, [], delta=0)
    rng = np.random.default_rng(seed)
    stubs = np.repeat(np.arange(n, dtype=np.int64), delta)
    for attempt in range(1, max_attempts + 1):
        rng.shuffle(stubs)
        pairs = stubs.reshape(-1, 2)
        lo = pairs.min(axis=1)
        hi = pairs.max(axis=1)
        if np.any(lo == hi):
            continue
        keys = lo * n + hi
        if len(np.unique(keys)) != len(keys):
            continue
        order = np.argsort(keys, kind="stable")
        edges = list(zip(lo[order].tolist(), hi[order].tolist()))
        logger.debug(f"random_regular(n={n}, delta={delta}) accepted after {attempt} attempts")
        return Graph(n, edges, delta=delta)
    raise BudgetExceededError(
        f"configuration model found no simple {delta}-regular graph on {n} vertices in {max_attempts} attempts"
    )


# ----------------------------- Components ----------------------------- #

def components(g: Graph, a: EdgeConfig) -> Tuple[List[int], int]:
    """Label connected components of (V, a); labels are 0..c-1 in vertex order."""
    if a.n_edges != g.n_edges:
        raise ValueError(f"edge config has {a.n_edges} edges, graph has {g.n_edges}")
    uf = UnionFind(g.n)
    bits = a.bits
    for i, (u, v) in enumerate(g.edges):
        if (bits >> i) & 1:
            uf.union(u, v)
    labels = []
    relabel: Dict[int, int] = {}
    for v in range(g.n):
        root = uf.find(v)
        if root not in relabel:
            relabel[root] = len(relabel)
        labels.append(relabel[root])
    return labels, len(relabel)


# ----------------------------- Expansion ----------------------------- #

@dataclass
class ExpansionProfile:
    alpha: float
    ratio: float
    witness: List[int] = field(default_factory=list)


def expansion_profile_exact(g: Graph, alpha: float, cap: int = DEFAULT_EXACT_CAP) -> ExpansionProfile:
    """min |E(S, S^c)| / (delta |S|) over nonempty S with |S| <= alpha * n.

    Vectorized over all vertex bitmasks, so n is capped.
    """
    if g.n > cap:
        raise CapExceededError(f"exact expansion profile limited to n <= {cap}, got n={g.n}")
    k_max = math.floor(alpha * g.n + 1e-12)
    if k_max < 1:
        raise ValueError(f"no admissible S for alpha={alpha} and n={g.n}")
    if g.delta <= 0:
        raise ValueError("expansion profile needs delta >= 1")
    us, vs = g.endpoints
    shifts = np.arange(g.n, dtype=np.int64)
    best_ratio = math.inf
    best_mask = 0
    total = 1 << g.n
    for start in range(1, total, _PROFILE_BATCH):
        masks = np.arange(start, min(start + _PROFILE_BATCH, total), dtype=np.int64)
        inside = ((masks[:, None] >> shifts) & 1).astype(bool)
        size = inside.sum(axis=1)
        valid = size <= k_max
        if not valid.any():
            continue
        boundary = (inside[:, us] ^ inside[:, vs]).sum(axis=1)
        ratio = np.where(valid, boundary / (g.delta * np.maximum(size, 1)), np.inf)
        idx = int(np.argmin(ratio))
        if ratio[idx] < best_ratio:
            best_ratio = float(ratio[idx])
            best_mask = int(masks[idx])
    witness = [v for v in range(g.n) if (best_mask >> v) & 1]
    return ExpansionProfile(alpha=alpha, ratio=best_ratio, witness=witness)


def _connected_vertex_sets(g: Graph, max_size: int) -> Iterator[Tuple[int, ...]]:
    """Connected vertex sets of size <= max_size, each exactly once (rooted at its minimum)."""

    def extend(current: List[int], extension: List[int], excluded: set, root: int):
        yield tuple(current)
        if len(current) == max_size:
            return
        extension = list(extension)
        while extension:
            w = extension.pop()
            new_ext = list(extension)
            new_excluded = set(excluded)
            for u in g.neighbors(w):
                if u > root and u not in new_excluded:
                    new_ext.append(u)
                    new_excluded.add(u)
            current.append(w)
            yield from extend(current, new_ext, new_excluded, root)
            current.pop()

    for root in range(g.n):
        ext = [u for u in g.neighbors(root) if u > root]
        excluded = {root, *ext}
        yield from extend([root], ext, excluded, root)


def min_small_set_ratio(g: Graph, max_size: int) -> ExpansionProfile:
    """Exact min boundary ratio over connected S with |S| <= max_size."""
    best = ExpansionProfile(alpha=max_size / max(g.n, 1), ratio=math.inf)
    for subset in _connected_vertex_sets(g, max_size):
        members = set(subset)
        boundary = sum(1 for v in subset for u in g.neighbors(v) if u not in members)
        ratio = boundary / (g.delta * len(subset))
        if ratio < best.ratio:
            best = ExpansionProfile(alpha=best.alpha, ratio=ratio, witness=sorted(subset))
    return best


def second_eigenvalue(g: Graph) -> float:
    """Second largest adjacency eigenvalue."""
    if g.n < 2:
        raise ValueError("spectrum needs at least two vertices")
    if g.n <= _DENSE_SPECTRUM_MAX:
        values = np.linalg.eigvalsh(g.adjacency_matrix().toarray())
        return float(values[-2])
    values = scipy.sparse.linalg.eigsh(g.adjacency_matrix().astype(float), k=2, which="LA",
                                       return_eigenvectors=False)
    return float(np.sort(values)[0])


def spectral_profile_bound(delta: int, lambda2: float, alpha: float) -> float:
    """Lower bound on phi(alpha) from the expander mixing lemma; (delta - lambda2)/(2 delta) at 1/2."""
    return (delta - lambda2) * (1 - alpha) / delta


class Verdict(str, Enum):
    PASS = "PASS"
    FAIL = "FAIL"
    UNKNOWN = "UNKNOWN"


class ClassCheckReport(BaseModel):
    verdict: Verdict
    method: str
    delta_small: float
    t_half: float
    t_small: float
    phi_half: Optional[float] = None
    phi_small: Optional[float] = None
    lambda2: Optional[float] = None
    spectral_half: Optional[float] = None
    spectral_small: Optional[float] = None
    witness: Optional[List[int]] = None
    notes: List[str] = []


def class_check(
    g: Graph,
    delta_small: float,
    t_half: float = DEFAULT_T_HALF,
    t_small: float = DEFAULT_T_SMALL,
    exact_cap: int = DEFAULT_EXACT_CAP,
    small_set_cap: int = DEFAULT_SMALL_SET_CAP,
) -> ClassCheckReport:
    """Certify phi(1/2) >= t_half and phi(delta_small) >= t_small.

    PASS is only returned with a certificate: the exact profile for small n,
    otherwise an exact connected small-set search combined with the spectral bound.
    """
    k_small = math.floor(delta_small * g.n + 1e-12)
    report = dict(delta_small=delta_small, t_half=t_half, t_small=t_small)
    if g.n < 2:
        return ClassCheckReport(verdict=Verdict.UNKNOWN, method="none", notes=["fewer than 2 vertices"], **report)

    if g.n <= exact_cap:
        half = expansion_profile_exact(g, 0.5, cap=exact_cap)
        small = expansion_profile_exact(g, delta_small, cap=exact_cap) if k_small >= 1 else None
        ok = half.ratio >= t_half and (small is None or small.ratio >= t_small)
        witness = None
        if half.ratio < t_half:
            witness = half.witness
        elif small is not None and small.ratio < t_small:
            witness = small.witness
        notes = [] if small is not None else ["small-set condition vacuous (floor(delta n) = 0)"]
        verdict = Verdict.PASS if ok else Verdict.FAIL
        logger.info(f"class_check exact: phi(1/2)={half.ratio:.4f}, verdict={verdict.value}")
        return ClassCheckReport(
            verdict=verdict,
            method="exact",
            phi_half=half.ratio,
            phi_small=small.ratio if small else None,
            witness=witness,
            notes=notes,
            **report,
        )

    # Disconnected graphs have a component of size <= n/2 with empty boundary.
    labels, c = g.base_components
    if c > 1:
        sizes = np.bincount(labels)
        comp = int(np.argmin(sizes))
        witness = [v for v in range(g.n) if labels[v] == comp]
        return ClassCheckReport(verdict=Verdict.FAIL, method="components", phi_half=0.0,
                                witness=witness, **report)

    exact_size = min(k_small, small_set_cap)
    small = min_small_set_ratio(g, exact_size) if exact_size >= 1 else None
    # A small set also bounds phi(1/2) from above.
    if small is not None and small.ratio < max(t_small, t_half):
        return ClassCheckReport(
            verdict=Verdict.FAIL,
            method="small-set",
            phi_small=small.ratio,
            phi_half=small.ratio if small.ratio < t_half else None,
            witness=small.witness,
            **report,
        )

    lam2 = second_eigenvalue(g)
    spectral_half = spectral_profile_bound(g.delta, lam2, 0.5)
    spectral_small = spectral_profile_bound(g.delta, lam2, delta_small)
    half_ok = spectral_half >= t_half
    small_ok = k_small == exact_size or spectral_small >= t_small
    notes = []
    if not half_ok:
        notes.append("spectral bound does not certify phi(1/2)")
    if not small_ok:
        notes.append(f"sets with {exact_size} < |S| <= {k_small} not certified")
    verdict = Verdict.PASS if half_ok and small_ok else Verdict.UNKNOWN
    logger.info(f"class_check spectral: lambda2={lam2:.4f}, verdict={verdict.value}")
    return ClassCheckReport(
        verdict=verdict,
        method="small-set+spectral",
        phi_small=small.ratio if small else None,
        lambda2=lam2,
        spectral_half=spectral_half,
        spectral_small=spectral_small,
        notes=notes,
        **report,
    )


# ----------------------------- Cycles and balls ----------------------------- #

def enumerate_cycles(g: Graph, k_max: int, cap: int = DEFAULT_CYCLE_K_MAX) -> Iterator[Tuple[int, ...]]:
    """Simple cycles of length 3..k_max, each once.

    The representative starts at its minimum vertex and has second vertex
    smaller than its last vertex.
    """
    if k_max > cap:
        raise CapExceededError(f"cycle enumeration limited to k_max <= {cap}, got {k_max}")
    for start in range(g.n):
        path = [start]
        on_path = {start}

        def walk(v: int) -> Iterator[Tuple[int, ...]]:
            for u in g.neighbors(v):
                if u == start and len(path) >= 3 and path[1] < path[-1]:
                    yield tuple(path)
                elif u > start and u not in on_path and len(path) < k_max:
                    path.append(u)
                    on_path.add(u)
                    yield from walk(u)
                    path.pop()
                    on_path.discard(u)

        yield from walk(start)


def count_cycles(g: Graph, k_max: int, cap: int = DEFAULT_CYCLE_K_MAX) -> Dict[int, int]:
    """Number of simple cycles X_k of each length 3 <= k <= k_max."""
    counts = {k: 0 for k in range(3, k_max + 1)}
    for cycle in enumerate_cycles(g, k_max, cap=cap):
        counts[len(cycle)] += 1
    return counts


def expected_cycle_count(delta: int, k: int) -> float:
    """Mean number of k-cycles in a random delta-regular graph, n -> infinity."""
    return (delta - 1) ** k / (2 * k)


@dataclass
class Ball:
    subgraph: Graph
    vertices: List[int]
    is_tree: bool
    cycles: List[Tuple[int, ...]]


def ball(g: Graph, v: int, radius: int) -> Ball:
    """Induced subgraph on vertices within distance radius of v.

    Cycles are listed (in original vertex ids) up to length 2 * radius + 1,
    the longest a cycle can be when every vertex is within reach of v.
    """
    dist = {v: 0}
    queue = deque([v])
    while queue:
        x = queue.popleft()
        if dist[x] == radius:
            continue
        for y in g.neighbors(x):
            if y not in dist:
                dist[y] = dist[x] + 1
                queue.append(y)
    vertices = sorted(dist)
    local = {x: i for i, x in enumerate(vertices)}
    edges = [(local[a], local[b]) for a, b in g.edges if a in local and b in local]
    sub = Graph(len(vertices), edges, delta=g.delta)
    is_tree = len(edges) == len(vertices) - 1
    cycles = []
    if not is_tree:
        k_max = min(2 * radius + 1, DEFAULT_CYCLE_K_MAX)
        if k_max >= 3:
            cycles = [tuple(vertices[i] for i in c) for c in enumerate_cycles(sub, k_max)]
    return Ball(subgraph=sub, vertices=vertices, is_tree=is_tree, cycles=cycles)
