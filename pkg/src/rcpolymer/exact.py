"""Brute-force oracles for small graphs.

Every approximate component is validated against these: exact random-cluster
and Potts partition functions (log space), the phase split of the random-cluster
sum, exact configuration tables, and the Edwards-Sokal coupling.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.special import logsumexp

from .graph import EdgeConfig, Graph, components
from .utils import CapExceededError, log_x

logger = logging.getLogger(__name__)

# Defaults (overridable via conf/base/parameters.yml).
DEFAULT_RC_EDGE_CAP = 30
DEFAULT_DISTRIBUTION_EDGE_CAP = 22
DEFAULT_POTTS_STATE_CAP = 10**8
DEFAULT_ETA = 0.01

# Colorings kept in one potts_distribution table.
DEFAULT_POTTS_TABLE_CAP = 10**6
# Subsets or colorings per vectorized batch.
DEFAULT_BATCH_SIZE = 1 << 16


def default_eta(delta_small: float) -> float:
    return min(1 / 100, delta_small / 5)


class ExactResult(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    log_z: float
    log_z_dis: float
    log_z_ord: float
    log_z_err: float
    eta: float


# ----------------------------- Vectorized census ----------------------------- #

def _batch_components(g: Graph, masks: np.ndarray, wired: bool = False) -> np.ndarray:
    """Component counts of (V, A) for a batch of edge bitmasks.

    Min-label propagation along present edges with pointer jumping. With
    wired=True, components touching a boundary mark are merged into one.
    """
    batch = len(masks)
    labels = np.tile(np.arange(g.n, dtype=np.int64), (batch, 1))
    us, vs = g.endpoints
    present = ((masks[:, None] >> np.arange(g.n_edges, dtype=np.int64)) & 1).astype(bool)
    rows = np.arange(batch)
    while True:
        before = labels.copy()
        for j in range(g.n_edges):
            sel = present[:, j]
            lu = labels[:, us[j]]
            lv = labels[:, vs[j]]
            low = np.minimum(lu, lv)
            labels[rows[sel], lu[sel]] = np.minimum(labels[rows[sel], lu[sel]], low[sel])
            labels[rows[sel], lv[sel]] = np.minimum(labels[rows[sel], lv[sel]], low[sel])
        labels = np.take_along_axis(labels, labels, axis=1)
        if np.array_equal(labels, before):
            break
    roots = labels == np.arange(g.n)
    if not wired:
        return roots.sum(axis=1)
    touched = np.zeros_like(roots)
    for b in g.boundary_marks:
        touched[rows, labels[:, b]] = True
    return (roots & ~touched).sum(axis=1) + 1


def _subset_batches(n_edges: int, batch_size: int):
    total = 1 << n_edges
    for start in range(0, total, batch_size):
        yield np.arange(start, min(start + batch_size, total), dtype=np.int64)


def _popcount(masks: np.ndarray, n_edges: int) -> np.ndarray:
    return ((masks[:, None] >> np.arange(n_edges, dtype=np.int64)) & 1).sum(axis=1)


@lru_cache(maxsize=16)
def edge_subset_census(
    g: Graph, boundary: str = "free", cap: int = DEFAULT_RC_EDGE_CAP, batch_size: int = DEFAULT_BATCH_SIZE
) -> np.ndarray:
    """N[k, c] = number of edge subsets with |A| = k and c(A) = c."""
    if g.n_edges > cap:
        raise CapExceededError(f"subset enumeration limited to |E| <= {cap}, got {g.n_edges}")
    if boundary not in ("free", "wired"):
        raise ValueError(f"boundary must be 'free' or 'wired', got {boundary!r}")
    wired = boundary == "wired"
    census = np.zeros((g.n_edges + 1, g.n + 2), dtype=np.int64)
    for masks in _subset_batches(g.n_edges, batch_size):
        sizes = _popcount(masks, g.n_edges)
        comps = _batch_components(g, masks, wired=wired)
        np.add.at(census, (sizes, comps), 1)
    logger.debug(f"census of {1 << g.n_edges} subsets on {g}")
    return census


def _log_terms(census: np.ndarray, q: float, beta: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Log-weights ln(N) + c ln q + k ln x over nonzero census cells."""
    ks, cs = np.nonzero(census)
    lx = log_x(beta)
    with np.errstate(invalid="ignore"):
        edge_part = np.where(ks > 0, ks * lx, 0.0)
    logs = np.log(census[ks, cs].astype(float)) + cs * math.log(q) + edge_part
    return ks, cs, logs


def _lse(values: np.ndarray) -> float:
    if values.size == 0:
        return -math.inf
    return float(logsumexp(values))


def z_rc_exact(
    g: Graph, q: float, beta: float, eta: float = DEFAULT_ETA, boundary: str = "free",
    cap: int = DEFAULT_RC_EDGE_CAP,
) -> ExactResult:
    """Random-cluster partition function by enumerating all 2^|E| edge subsets.

    Args:
        g: Graph with |E| <= cap.
        q: Cluster weight, q > 0.
        beta: Inverse temperature, beta >= 0.
        eta: Phase split; |A| <= eta|E| is disordered, |A| >= (1-eta)|E| ordered.
        boundary: "free", or "wired" for boundary-marked graphs, where all
            components touching the boundary count as one.

    Returns:
        ExactResult with the total and per-phase log sums.
    """
    if q <= 0:
        raise ValueError(f"q must be positive, got {q}")
    if not 0 <= eta < 0.5:
        raise ValueError(f"eta must lie in [0, 1/2), got {eta}")
    census = edge_subset_census(g, boundary, cap)
    ks, _, logs = _log_terms(census, q, beta)
    n_edges = g.n_edges
    dis = ks <= eta * n_edges
    ordered = (ks >= (1 - eta) * n_edges) & ~dis
    err = ~(dis | ordered)
    return ExactResult(
        log_z=_lse(logs),
        log_z_dis=_lse(logs[dis]),
        log_z_ord=_lse(logs[ordered]),
        log_z_err=_lse(logs[err]),
        eta=eta,
    )


def phase_fractions(result: ExactResult) -> Dict[str, float]:
    """Z_dis/Z, Z_ord/Z and Z_err/Z."""
    return {
        "dis": math.exp(result.log_z_dis - result.log_z),
        "ord": math.exp(result.log_z_ord - result.log_z),
        "err": math.exp(result.log_z_err - result.log_z),
    }


def geometry_margin(g: Graph, eta: float = DEFAULT_ETA, cap: int = DEFAULT_RC_EDGE_CAP) -> Dict[str, float]:
    """max over intermediate A of c(A)/n + |A|/|E|, against the bound 1 - eta/40."""
    census = edge_subset_census(g, "free", cap)
    ks, cs = np.nonzero(census)
    middle = (ks > eta * g.n_edges) & (ks < (1 - eta) * g.n_edges)
    value = float(np.max(cs[middle] / g.n + ks[middle] / g.n_edges)) if middle.any() else -math.inf
    bound = 1 - eta / 40
    return {"max_value": value, "bound": bound, "holds": value <= bound}


# ----------------------------- Potts ----------------------------- #

def _coloring_batches(n: int, q: int, batch_size: int):
    total = q**n
    powers = q ** np.arange(n, dtype=np.int64)
    for start in range(0, total, batch_size):
        idx = np.arange(start, min(start + batch_size, total), dtype=np.int64)
        yield idx, (idx[:, None] // powers) % q


def _check_potts(g: Graph, q: int, cap: int):
    if int(q) != q or q < 1:
        raise ValueError(f"Potts model needs a positive integer q, got {q}")
    if float(q) ** g.n > cap:
        raise CapExceededError(f"q^n = {q}^{g.n} exceeds the coloring cap {cap}")


def z_potts_exact(
    g: Graph, q: int, beta: float, cap: int = DEFAULT_POTTS_STATE_CAP, batch_size: int = DEFAULT_BATCH_SIZE
) -> float:
    """ln of sum over colorings of exp(beta * #monochromatic edges)."""
    _check_potts(g, q, cap)
    q = int(q)
    us, vs = g.endpoints
    counts = np.zeros(g.n_edges + 1, dtype=np.int64)
    for _, colors in _coloring_batches(g.n, q, batch_size):
        mono = (colors[:, us] == colors[:, vs]).sum(axis=1)
        counts += np.bincount(mono, minlength=g.n_edges + 1)
    ks = np.nonzero(counts)[0]
    return _lse(np.log(counts[ks].astype(float)) + beta * ks)


def potts_distribution(g: Graph, q: int, beta: float, cap: int = DEFAULT_POTTS_TABLE_CAP) -> np.ndarray:
    """Gibbs probabilities indexed by coloring code sum_v sigma_v q^v."""
    _check_potts(g, q, cap)
    q = int(q)
    us, vs = g.endpoints
    _, colors = next(_coloring_batches(g.n, q, q**g.n))
    mono = (colors[:, us] == colors[:, vs]).sum(axis=1)
    logs = beta * mono
    return np.exp(logs - logsumexp(logs))


def coloring_code(sigma: np.ndarray, q: int) -> int:
    return int(np.dot(np.asarray(sigma, dtype=np.int64), q ** np.arange(len(sigma), dtype=np.int64)))


# ----------------------------- Distributions ----------------------------- #

@dataclass
class RCDistribution:
    """Exact random-cluster probabilities indexed by edge bitmask."""

    probs: np.ndarray
    sizes: np.ndarray
    n_edges: int

    def prob(self, a: EdgeConfig) -> float:
        return float(self.probs[a.bits])

    def phase_masses(self, eta: float = DEFAULT_ETA) -> Dict[str, float]:
        dis = self.sizes <= eta * self.n_edges
        ordered = (self.sizes >= (1 - eta) * self.n_edges) & ~dis
        return {
            "dis": float(self.probs[dis].sum()),
            "ord": float(self.probs[ordered].sum()),
            "err": float(self.probs[~(dis | ordered)].sum()),
        }


def rc_distribution(
    g: Graph, q: float, beta: float, cap: int = DEFAULT_DISTRIBUTION_EDGE_CAP,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> RCDistribution:
    if g.n_edges > cap:
        raise CapExceededError(f"rc_distribution limited to |E| <= {cap}, got {g.n_edges}")
    lx = log_x(beta)
    logs = np.empty(1 << g.n_edges)
    sizes = np.empty(1 << g.n_edges, dtype=np.int64)
    for masks in _subset_batches(g.n_edges, batch_size):
        k = _popcount(masks, g.n_edges)
        c = _batch_components(g, masks)
        with np.errstate(invalid="ignore"):
            logs[masks] = c * math.log(q) + np.where(k > 0, k * lx, 0.0)
        sizes[masks] = k
    probs = np.exp(logs - logsumexp(logs))
    return RCDistribution(probs=probs, sizes=sizes, n_edges=g.n_edges)


# ----------------------------- Coupling ----------------------------- #

def edwards_sokal_color(g: Graph, a: EdgeConfig, q: int, rng: np.random.Generator) -> np.ndarray:
    """One uniform color per component of (V, a)."""
    labels, c = components(g, a)
    colors = rng.integers(int(q), size=c)
    return colors[np.asarray(labels, dtype=np.int64)]


def monochromatic_edges(g: Graph, sigma: np.ndarray) -> EdgeConfig:
    us, vs = g.endpoints
    sigma = np.asarray(sigma)
    return EdgeConfig.from_array(sigma[us] == sigma[vs])
