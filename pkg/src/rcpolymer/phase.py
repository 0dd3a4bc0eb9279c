"""Phase-diagram analytics on regular trees.

Infinite-tree quantities are computed on depth-L truncations with L >= m.
Clusters of total size below m that contain the root never reach the
truncation boundary, so the truncated sums are exact for the infinite tree.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel

from .cluster_expansion import DEFAULT_BUDGET, ClusterSeries, cluster_series
from .engine import regime, regime_window
from .graph import Graph
from .polymers import PolymerArena, polymer_arena
from .utils import log_x

logger = logging.getLogger(__name__)

# Defaults (overridable via conf/base/parameters.yml).
DEFAULT_BISECTION_TOL = 1e-10
DEFAULT_K_MAX = 6


# ----------------------------- Trees ----------------------------- #

@dataclass(frozen=True)
class TreeSpec:
    """Depth-L truncation of the delta-regular tree, optionally rooted at a k-cycle.

    In the cycle variant every cycle vertex carries delta - 2 children and
    every other internal vertex delta - 1; depth is measured from the cycle.
    """

    delta: int
    depth: int
    cycle_length: Optional[int] = None
    root: int = 0


def build_tree(spec: TreeSpec) -> Graph:
    """Explicit finite tree; boundary marks on the depth-L frontier only.

    Vertices are numbered in BFS order from the root and edges sorted by their
    endpoints, so edge ids never decrease with distance from the root.
    """
    delta, depth, k = spec.delta, spec.depth, spec.cycle_length
    if delta < 1 or depth < 0:
        raise ValueError(f"invalid tree spec {spec}")
    edges = []
    level = []
    if k is None:
        level = [0]
        n = 1
        seeds = [(0, delta)]
    else:
        if k < 3 or delta < 3:
            raise ValueError(f"cycle-rooted trees need k >= 3 and delta >= 3, got {spec}")
        edges = [(i, (i + 1) % k) for i in range(k)]
        level = list(range(k))
        n = k
        seeds = [(v, delta - 2) for v in level]
    boundary = list(level) if depth == 0 and k is None else []
    children_of = dict(seeds)
    for d in range(1, depth + 1):
        nxt = []
        for v in level:
            for _ in range(children_of.get(v, delta - 1)):
                edges.append((v, n))
                nxt.append(n)
                n += 1
        level = nxt
        if d == depth:
            boundary = list(level)
    return _relabel_bfs(n, edges, delta, boundary, spec.root)


def _relabel_bfs(n: int, edges: List, delta: int, boundary: List[int], root: int) -> Graph:
    adjacency = [[] for _ in range(n)]
    for u, v in edges:
        adjacency[u].append(v)
        adjacency[v].append(u)
    order = [root]
    seen = {root}
    queue = deque([root])
    while queue:
        x = queue.popleft()
        for y in sorted(adjacency[x]):
            if y not in seen:
                seen.add(y)
                order.append(y)
                queue.append(y)
    new = {old: i for i, old in enumerate(order)}
    relabelled = sorted((min(new[u], new[v]), max(new[u], new[v])) for u, v in edges)
    return Graph(n, relabelled, delta=delta, boundary_marks=[new[b] for b in boundary])


def _edge_depths(g: Graph, root: int) -> List[float]:
    dist = g.distances_from(root)
    return [min(dist[u], dist[v]) for u, v in g.edges]


def root_arena(g: Graph, root: int, model: str, m: int) -> PolymerArena:
    """Polymers that can belong to a cluster of size < m containing root.

    A polymer with s edges at distance d from the root needs d + s <= m - 1.
    """
    depths = _edge_depths(g, root)
    if all(a <= b for a, b in zip(depths, depths[1:])):
        # Sets are rooted at their minimum edge id, which is also their closest edge.
        return polymer_arena(g, model, m - 1, root_cap=lambda e: int(m - 1 - depths[e]))
    dist = g.distances_from(root)
    arena = polymer_arena(g, model, m - 1)
    keep = [p for p in arena.polymers if min(dist[v] for v in p.vertices) + p.size <= m - 1]
    return PolymerArena(keep, graph=g)


def pinned_cluster_sum(
    g: Graph,
    root: int,
    model: str,
    q: float,
    beta: float,
    m: int,
    weighting: str = "site",
    min_size: int = 0,
    budget: int = DEFAULT_BUDGET,
) -> float:
    """Sum over clusters of size < m containing root.

    weighting="site" divides each cluster by the number of vertices it covers;
    "plain" is the bare rooted sum.
    """
    if m <= 1:
        return 0.0
    arena = root_arena(g, root, model, m)
    series = cluster_series(arena, m, root=root, weighting=weighting, budget=budget, min_size=min_size)
    return series.evaluate(q, beta)


@lru_cache(maxsize=64)
def root_series(
    delta: int,
    m: int,
    model: str,
    weighting: str = "site",
    cycle_length: Optional[int] = None,
    min_size: int = 0,
    depth: Optional[int] = None,
    budget: int = DEFAULT_BUDGET,
) -> ClusterSeries:
    """Root cluster series on the (cycle-rooted) tree truncated at depth >= m."""
    if m <= 1:
        return ClusterSeries(m=m, terms={}, n_clusters=0, weighting=weighting)
    g = build_tree(TreeSpec(delta=delta, depth=depth if depth is not None else m, cycle_length=cycle_length))
    arena = root_arena(g, 0, model, m)
    logger.info(f"root series ({model}, delta={delta}, m={m}, cycle={cycle_length}): {len(arena)} polymers")
    return cluster_series(arena, m, root=0, weighting=weighting, budget=budget, min_size=min_size)


# ----------------------------- Free energies ----------------------------- #

class FreeEnergy(BaseModel):
    value: float
    tail_bound: float
    m: int
    verified: bool


def f_dis_closed(q: float, beta: float, delta: int) -> float:
    """ln q + (delta/2) ln(1 + (e^beta - 1)/q)."""
    return math.log(q) + delta / 2 * math.log1p(math.expm1(beta) / q)


def f_dis_truncated(q: float, beta: float, delta: int, m: int) -> float:
    """Disordered root-cluster free energy on the tree, truncated at size m."""
    return math.log(q) + root_series(delta, m, "dis").evaluate(q, beta)


def f_ord_truncated(q: float, beta: float, delta: int, m: int, depth: Optional[int] = None) -> FreeEnergy:
    """(delta/2) ln(e^beta - 1) plus the ordered root-cluster sum of size < m."""
    if beta <= 0:
        raise ValueError("ordered free energy needs beta > 0")
    if depth is not None and depth < m:
        raise ValueError(f"tree depth {depth} must be at least m={m}")
    correction = root_series(delta, m, "ord", depth=depth).evaluate(q, beta)
    beta0, _ = regime_window(q, delta)
    verified = beta >= beta0
    if not verified:
        logger.warning(f"f_ord at beta={beta} below beta0={beta0:.4f}: expansion not guaranteed (UNVERIFIED)")
    return FreeEnergy(
        value=delta / 2 * log_x(beta) + correction,
        tail_bound=math.exp(-m * math.log(q) / (200 * delta)),
        m=m,
        verified=verified,
    )


def free_energy_gap(q: float, beta: float, delta: int, m: int) -> float:
    """f_ord - f_dis; negative below beta_c, positive above."""
    return f_ord_truncated(q, beta, delta, m).value - f_dis_closed(q, beta, delta)


# ----------------------------- Critical point ----------------------------- #

class BetaCResult(BaseModel):
    beta_c: float
    lo: float
    hi: float
    m: int
    iterations: int
    beta0: float
    beta1: float


def beta_c_solve(q: float, delta: int, m: int, tol: float = DEFAULT_BISECTION_TOL) -> BetaCResult:
    """Bisection for f_ord = f_dis on [beta0, beta1]; the gap is increasing there."""
    beta0, beta1 = regime_window(q, delta)
    g_lo = free_energy_gap(q, beta0, delta, m)
    g_hi = free_energy_gap(q, beta1, delta, m)
    if not (g_lo < 0 < g_hi):
        raise ValueError(
            f"no sign change of f_ord - f_dis on [beta0, beta1] at m={m}: g(beta0)={g_lo:.4g}, g(beta1)={g_hi:.4g}"
        )
    lo, hi = beta0, beta1
    iterations = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if free_energy_gap(q, mid, delta, m) < 0:
            lo = mid
        else:
            hi = mid
        iterations += 1
        if iterations > 200:
            break
    result = BetaCResult(beta_c=0.5 * (lo + hi), lo=lo, hi=hi, m=m, iterations=iterations, beta0=beta0, beta1=beta1)
    logger.info(f"beta_c(q={q:g}, delta={delta}, m={m}) = {result.beta_c:.10f}")
    return result


def beta_c_first_order(q: float, delta: int) -> float:
    """m = 1 solution: e^beta - 1 = q^(2/delta) / (1 - q^(2/delta - 1))."""
    ratio = q ** (2 / delta - 1)
    if ratio >= 1:
        raise ValueError(f"no first-order crossing for q={q}, delta={delta}")
    return math.log1p(q ** (2 / delta) / (1 - ratio))


def beta_c_potts_formula(q: float, delta: int) -> float:
    """ln((q - 2) / ((q - 1)^(1 - 2/delta) - 1))."""
    if q <= 2:
        raise ValueError(f"formula defined for q > 2, got {q}")
    return math.log((q - 2) / ((q - 1) ** (1 - 2 / delta) - 1))


def free_tree_edge_prob(q: float, beta: float) -> float:
    x = math.expm1(beta)
    return x / (x + q)


# ----------------------------- Cycle coefficients ----------------------------- #

def alpha_k(model: str, k: int, q: float, beta: float, delta: int, m: int) -> float:
    """Rooted cluster sum on the k-cycle-rooted tree minus the one on the plain tree.

    Clusters of size < k see no cycle and cancel, so only sizes in [k, m) are enumerated.
    """
    if k >= m:
        return 0.0
    if model == "dis" and beta == 0:
        return 0.0
    cycle = root_series(delta, m, model, weighting="plain", cycle_length=k, min_size=k)
    plain = root_series(delta, m, model, weighting="plain", min_size=k)
    return cycle.evaluate(q, beta) - plain.evaluate(q, beta)


def alpha_bound(k: int, q: float, delta: int) -> float:
    return 2 * math.exp(-k * math.log(q) / (200 * delta))


def expected_cycle_mean(delta: int, k: int) -> float:
    return (delta - 1) ** k / (2 * k)


@dataclass
class ScalingSample:
    """Draws of the finite-size-scaling variables; arrays run over draws."""

    k_values: np.ndarray
    alpha_dis: np.ndarray
    alpha_ord: np.ndarray
    y: np.ndarray
    w_dis: np.ndarray
    w_ord: np.ndarray
    w: np.ndarray
    q_ratio: np.ndarray
    q: float

    @property
    def k_max(self) -> int:
        return int(self.k_values[-1]) if len(self.k_values) else 2

    @property
    def Q(self) -> np.ndarray:
        return self.q * self.q_ratio

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.y, columns=[f"Y_{k}" for k in self.k_values])
        frame["W_dis"] = self.w_dis
        frame["W_ord"] = self.w_ord
        frame["W"] = self.w
        frame["Q"] = self.Q
        return frame


def sample_W(
    model: str,
    q: float,
    beta: float,
    delta: int,
    m: int,
    k_max: int,
    draws: int,
    rng: np.random.Generator,
    alphas: Optional[Dict[str, Sequence[float]]] = None,
) -> ScalingSample:
    """W_dis = sum alpha_k^dis Y_k, W_ord = ln q + sum alpha_k^ord Y_k, Q = e^(W_ord - W_dis).

    Y_k are independent Poisson with mean (delta-1)^k / (2k). model "dis" or
    "ord" computes only that side's coefficients; "both" computes both.
    """
    if model not in ("dis", "ord", "both"):
        raise ValueError(f"model must be 'dis', 'ord' or 'both', got {model!r}")
    ks = np.arange(3, k_max + 1)
    if alphas is not None:
        a_dis = np.asarray(alphas.get("dis", np.zeros(len(ks))), dtype=float)
        a_ord = np.asarray(alphas.get("ord", np.zeros(len(ks))), dtype=float)
    else:
        a_dis = np.array([alpha_k("dis", int(k), q, beta, delta, m) if model != "ord" else 0.0 for k in ks])
        a_ord = np.array([alpha_k("ord", int(k), q, beta, delta, m) if model != "dis" else 0.0 for k in ks])
    means = np.array([expected_cycle_mean(delta, int(k)) for k in ks])
    y = rng.poisson(means, size=(draws, len(ks)))
    w_dis = y @ a_dis
    shift = y @ a_ord
    w = shift - w_dis + math.log(q)
    return ScalingSample(
        k_values=ks, alpha_dis=a_dis, alpha_ord=a_ord, y=y, w_dis=w_dis, w_ord=math.log(q) + shift, w=w,
        q_ratio=np.exp(shift - w_dis), q=q,
    )


# ----------------------------- Tables ----------------------------- #

def phase_grid(q: float, delta: int, m: int, betas: Sequence[float]) -> pd.DataFrame:
    """Rows (beta, f_dis, f_ord, g, regime) over a beta grid."""
    rows = []
    for beta in betas:
        f_dis = f_dis_closed(q, beta, delta)
        f_ord = f_ord_truncated(q, beta, delta, m).value if beta > 0 else float("nan")
        rows.append((beta, f_dis, f_ord, f_ord - f_dis, regime(q, delta, beta).regime.value))
    return pd.DataFrame(rows, columns=["beta", "f_dis", "f_ord", "g", "regime"])


def beta_c_table(qs: Sequence[float], delta: int, m: int, tol: float = DEFAULT_BISECTION_TOL) -> pd.DataFrame:
    """beta_c at truncation m next to the m = 1 closed form, the explicit formula and 2 ln q / delta."""
    rows = []
    for q in qs:
        try:
            solved, status = beta_c_solve(q, delta, m, tol).beta_c, "ok"
        except ValueError as e:
            solved, status = float("nan"), str(e)
        rows.append(
            {
                "q": q,
                "m": m,
                "beta_c": solved,
                "beta_c_first_order": beta_c_first_order(q, delta),
                "beta_c_formula": beta_c_potts_formula(q, delta),
                "two_log_q_over_delta": 2 * math.log(q) / delta,
                "status": status,
            }
        )
    return pd.DataFrame(rows)
