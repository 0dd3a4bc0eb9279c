import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.special import expit, logsumexp

from .cluster_expansion import (
    DEFAULT_BUDGET,
    ClusterSeries,
    cluster_series,
    kp_check,
    tail_bound,
    truncated_log_xi,
)
from .exact import (
    DEFAULT_DISTRIBUTION_EDGE_CAP,
    DEFAULT_ETA,
    DEFAULT_RC_EDGE_CAP,
    edwards_sokal_color,
    rc_distribution,
    z_rc_exact,
)
from .graph import DEFAULT_EXACT_CAP, DEFAULT_SMALL_SET_CAP, EdgeConfig, Graph, Verdict, class_check
from .polymers import DEFAULT_DIS_CAP, DEFAULT_ORD_CAP, Polymer, PolymerArena, polymer_arena
from .utils import CapExceededError, log_x

logger = logging.getLogger(__name__)

# Defaults (overridable via conf/base/parameters.yml).
DEFAULT_EPSILON = 0.1
DEFAULT_SAMPLER_C = 50
DEFAULT_DELTA_SMALL = 0.2


class GraphClassError(ValueError):
    """The graph did not pass class_check and force was not set."""


class Regime(str, Enum):
    DIS_ONLY = "DIS_ONLY"
    BOTH = "BOTH"
    ORD_ONLY = "ORD_ONLY"


@dataclass(frozen=True)
class RegimeInfo:
    regime: Regime
    beta0: float
    beta1: float


def regime_window(q: float, delta: int) -> Tuple[float, float]:
    """(beta0, beta1) with e^beta0 - 1 = q^(1.9/delta) and e^beta1 - 1 = q^(2.1/delta)."""
    if q <= 1:
        raise ValueError(f"regime needs q > 1, got {q}")
    return math.log1p(q ** (1.9 / delta)), math.log1p(q ** (2.1 / delta))


def regime(q: float, delta: int, beta: float) -> RegimeInfo:
    beta0, beta1 = regime_window(q, delta)
    if beta <= beta0:
        label = Regime.DIS_ONLY
    elif beta >= beta1:
        label = Regime.ORD_ONLY
    else:
        label = Regime.BOTH
    return RegimeInfo(regime=label, beta0=beta0, beta1=beta1)


def active_models(label: Regime) -> List[str]:
    return {Regime.DIS_ONLY: ["dis"], Regime.ORD_ONLY: ["ord"], Regime.BOTH: ["dis", "ord"]}[label]


def choose_m(n: int, epsilon: float, q: float, delta: int, cap: Optional[int] = None) -> int:
    """Smallest m with n q^(-m/(200 delta)) <= epsilon/4, at least 1, clamped to cap."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if q <= 1:
        raise ValueError(f"choose_m needs q > 1, got {q}")
    m = max(1, math.ceil(200 * delta * math.log(4 * n / epsilon) / math.log(q)))
    if cap is not None and m > cap:
        logger.warning(f"required truncation m={m} exceeds enumeration cap; clamping to {cap}")
        return cap
    return m


class PhaseReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    n: int
    q: float
    beta: float
    log_zdis_hat: Optional[float] = None
    log_zord_hat: Optional[float] = None
    log_ztilde: float
    regime: Regime
    beta0: float
    beta1: float
    m: int
    m_required: Optional[int] = None
    epsilon: float
    active_terms: List[str] = []
    tail_dis: Optional[float] = None
    tail_ord: Optional[float] = None
    kp_dis: Optional[bool] = None
    kp_ord: Optional[bool] = None
    status: List[str] = []
    eps_split: Dict[str, float] = {}
    method: str = "expansion"

    def phase_probabilities(self) -> Dict[str, float]:
        """Relative weights of the active terms."""
        logs = {"dis": self.log_zdis_hat, "ord": self.log_zord_hat}
        active = {k: v for k, v in logs.items() if k in self.active_terms and v is not None}
        total = logsumexp(list(active.values()))
        return {k: math.exp(v - total) for k, v in active.items()}


def epsilon_split(epsilon: float) -> Dict[str, float]:
    return {"tail_dis": epsilon / 4, "tail_ord": epsilon / 4, "sampler_tv": epsilon / 4, "reserve": epsilon / 4}


@lru_cache(maxsize=32)
def model_series(
    g: Graph, model: str, m: int, budget: int = DEFAULT_BUDGET, n_jobs: int = 1
) -> Tuple[PolymerArena, ClusterSeries]:
    """Polymers with < m edges and their cluster series; independent of q and beta."""
    arena = polymer_arena(g, model, max(m - 1, 0))
    return arena, cluster_series(arena, m, budget=budget, n_jobs=n_jobs)


def _require_class(g: Graph, force: bool, delta_small: float, exact_cap: int, small_set_cap: int):
    if force:
        return
    report = class_check(g, delta_small, exact_cap=exact_cap, small_set_cap=small_set_cap)
    if report.verdict != Verdict.PASS:
        raise GraphClassError(
            f"graph failed class_check ({report.verdict.value}, method={report.method}); pass force=True to override"
        )


def log_z_tilde(
    g: Graph,
    q: float,
    beta: float,
    epsilon: float = DEFAULT_EPSILON,
    m: Optional[int] = None,
    force: bool = False,
    delta_small: float = DEFAULT_DELTA_SMALL,
    audit: bool = True,
    budget: int = DEFAULT_BUDGET,
    n_jobs: int = 1,
    dis_cap: int = DEFAULT_DIS_CAP,
    ord_cap: int = DEFAULT_ORD_CAP,
    brute_force_cap: int = DEFAULT_RC_EDGE_CAP,
    exact_cap: int = DEFAULT_EXACT_CAP,
    small_set_cap: int = DEFAULT_SMALL_SET_CAP,
) -> PhaseReport:
    """Polymer-model approximation of log Z.

    log Z~ = logsumexp(n ln q + T_m^dis, ln q + |E| ln(e^beta - 1) + T_m^ord)
    over the terms active in the regime of beta. Outside [beta0, beta1] the
    other phase is exponentially negligible and its expansion is not used.

    Args:
        g: Delta-regular graph.
        q: Cluster weight, q > 1.
        beta: Inverse temperature, beta >= 0.
        epsilon: Target relative error.
        m: Truncation override; otherwise chosen from epsilon and clamped.
        force: Skip the class_check gate.
        exact_cap, small_set_cap: Enumeration caps handed to class_check.

    Returns:
        PhaseReport with the estimate, flags and tail bounds.
    """
    _require_class(g, force, delta_small, exact_cap, small_set_cap)
    info = regime(q, g.delta, beta)
    base = dict(n=g.n, q=q, beta=beta, regime=info.regime, beta0=info.beta0, beta1=info.beta1,
                epsilon=epsilon, eps_split=epsilon_split(epsilon))

    if epsilon < math.exp(-g.n / 2):
        if g.n_edges > brute_force_cap:
            raise CapExceededError(
                f"epsilon={epsilon} below e^(-n/2) needs exact enumeration, but |E|={g.n_edges} > {brute_force_cap}"
            )
        exact = z_rc_exact(g, q, beta, cap=brute_force_cap)
        logger.info(f"epsilon below e^(-n/2): using exact enumeration, log Z={exact.log_z:.6f}")
        return PhaseReport(log_ztilde=exact.log_z, m=0, active_terms=[], status=["BRUTE_FORCE"],
                           method="brute_force", **base)

    models = active_models(info.regime)
    cap = min(dis_cap if "dis" in models else math.inf, ord_cap if "ord" in models else math.inf) + 1
    status = []
    m_required = choose_m(g.n, epsilon, q, g.delta)
    if m is None:
        m = min(m_required, int(cap))
    elif m > cap:
        raise CapExceededError(f"m={m} exceeds the polymer enumeration cap ({int(cap) - 1} edges)")
    if m < m_required:
        status.append("DEGRADED")
        logger.warning(f"truncation m={m} below the required {m_required}; epsilon tail bound not met")

    report = PhaseReport(log_ztilde=0.0, m=m, m_required=m_required, active_terms=models, **base)
    terms = []
    for model in models:
        tail = tail_bound(g.n, q, g.delta, m)
        if model == "dis" and beta == 0:
            value, kp_ok = 0.0, True
        else:
            arena, series = model_series(g, model, m, budget, n_jobs)
            value = truncated_log_xi(arena, q, beta, m, model=model, series=series).value
            kp_ok = kp_check(g, q, beta, model, m=max(m - 1, 0), arena=arena).holds_up_to_m if audit else None
        if model == "dis":
            report.log_zdis_hat = g.n * math.log(q) + value
            report.tail_dis, report.kp_dis = tail, kp_ok
            terms.append(report.log_zdis_hat)
        else:
            report.log_zord_hat = math.log(q) + g.n_edges * log_x(beta) + value
            report.tail_ord, report.kp_ord = tail, kp_ok
            terms.append(report.log_zord_hat)
        if kp_ok is False:
            status.append("UNVERIFIED")
    report.log_ztilde = float(logsumexp(terms))
    report.status = sorted(set(status)) or ["OK"]
    logger.info(
        f"log Z~={report.log_ztilde:.6f} on {g} (q={q}, beta={beta}, regime={info.regime.value}, m={m}, "
        f"status={report.status})"
    )
    return report


# ----------------------------- Sampling ----------------------------- #

def sampler_budget(n_polymers: int, eps_tv: float, c: float = DEFAULT_SAMPLER_C) -> int:
    """ceil(C N ln(N / eps_tv)) Glauber steps."""
    if n_polymers == 0:
        return 0
    return max(1, math.ceil(c * n_polymers * math.log(n_polymers / eps_tv)))


class PolymerGlauber:
    """Heat-bath single-polymer dynamics on the hard-core polymer system.

    A step picks a polymer uniformly; if present it is removed with
    probability 1/(1+w), if absent and compatible with the configuration it
    is added with probability w/(1+w). The stationary law is
    prod(w) / Xi over compatible sets.
    """

    def __init__(self, arena: PolymerArena, log_weights: np.ndarray, rng: np.random.Generator):
        self.arena = arena
        self.rng = rng
        log_weights = np.asarray(log_weights, dtype=float)
        self.p_on = expit(log_weights)
        self.present: set = set()
        self.owner: Dict[int, int] = {}
        self.steps = 0

    def run(self, steps: int):
        n = len(self.arena)
        if n == 0 or steps <= 0:
            return
        picks = self.rng.integers(n, size=steps)
        draws = self.rng.random(steps)
        polymers = self.arena.polymers
        for i, u in zip(picks.tolist(), draws.tolist()):
            if i in self.present:
                if u >= self.p_on[i]:
                    self.present.discard(i)
                    for v in polymers[i].vertices:
                        del self.owner[v]
            elif u < self.p_on[i] and not any(v in self.owner for v in polymers[i].vertices):
                self.present.add(i)
                for v in polymers[i].vertices:
                    self.owner[v] = i
        self.steps += steps

    def configuration(self) -> List[int]:
        return sorted(self.present)


@dataclass
class PolymerSample:
    ids: List[int]
    polymers: List[Polymer] = field(default_factory=list)
    steps: int = 0


def sample_polymer_config(
    g: Graph,
    q: float,
    beta: float,
    model: str,
    m: int,
    rng: np.random.Generator,
    eps_tv: float = DEFAULT_EPSILON / 4,
    c: float = DEFAULT_SAMPLER_C,
    steps: Optional[int] = None,
    arena: Optional[PolymerArena] = None,
) -> PolymerSample:
    """Approximate sample from nu(Gamma) = prod w / Xi over polymers with at most m edges."""
    if arena is None:
        arena = polymer_arena(g, model, m)
    if model == "dis" and beta == 0:
        return PolymerSample(ids=[], polymers=[], steps=0)
    steps = sampler_budget(len(arena), eps_tv, c) if steps is None else steps
    chain = PolymerGlauber(arena, arena.log_weights(q, beta), rng)
    chain.run(steps)
    ids = chain.configuration()
    return PolymerSample(ids=ids, polymers=[arena.polymers[i] for i in ids], steps=steps)


def polymer_to_edges(model: str, polymers: List[Polymer], g: Graph) -> EdgeConfig:
    """Dis: union of polymer edges. Ord: all edges minus the unoccupied ones."""
    if model == "dis":
        return EdgeConfig.from_edge_ids((e for p in polymers for e in p.edge_ids), g.n_edges)
    if model == "ord":
        removed = {e for p in polymers for e in p.unoccupied}
        return EdgeConfig.from_edge_ids((e for e in range(g.n_edges) if e not in removed), g.n_edges)
    raise ValueError(f"model must be 'dis' or 'ord', got {model!r}")


@dataclass
class RCSampleBatch:
    configs: List[EdgeConfig]
    phases: List[str]
    report: PhaseReport
    status: List[str]


def _sample_exact(g, q, beta, rng, n_samples, report, status, cap, eta) -> RCSampleBatch:
    dist = rc_distribution(g, q, beta, cap=cap)
    bits = rng.choice(len(dist.probs), size=n_samples, p=dist.probs)
    configs = [EdgeConfig(int(b), g.n_edges) for b in bits.tolist()]
    phases = []
    for a in configs:
        size = a.count()
        if size <= eta * g.n_edges:
            phases.append("dis")
        elif size >= (1 - eta) * g.n_edges:
            phases.append("ord")
        else:
            phases.append("err")
    return RCSampleBatch(configs=configs, phases=phases, report=report, status=status)


def sample_rc_many(
    g: Graph,
    q: float,
    beta: float,
    epsilon: float,
    rng: np.random.Generator,
    n_samples: int,
    m: Optional[int] = None,
    thin: Optional[int] = None,
    force: bool = False,
    c: float = DEFAULT_SAMPLER_C,
    report: Optional[PhaseReport] = None,
    distribution_cap: int = DEFAULT_DISTRIBUTION_EDGE_CAP,
    eta: float = DEFAULT_ETA,
) -> RCSampleBatch:
    """Random-cluster samples from the polymer representation.

    Each sample picks a phase with probability proportional to its Z~ term,
    then reads the next state of that phase's polymer chain. Chains burn in
    for the full budget; consecutive samples of one chain are thin steps apart
    (default: the full budget again). When epsilon is below e^(-n/2) the
    samples are exact draws from the enumerated distribution instead.
    """
    if report is None:
        report = log_z_tilde(g, q, beta, epsilon, m=m, force=force)
    status = [s for s in report.status if s != "OK"]
    if report.method == "brute_force":
        return _sample_exact(g, q, beta, rng, n_samples, report, status, distribution_cap, eta)
    probs = report.phase_probabilities()
    phases = list(probs)
    choice = rng.choice(len(phases), size=n_samples, p=[probs[p] for p in phases])
    chains: Dict[str, Tuple[PolymerGlauber, int]] = {}
    configs, picked = [], []
    for idx in choice.tolist():
        model = phases[idx]
        if model == "dis" and beta == 0:
            configs.append(EdgeConfig.empty(g.n_edges))
            picked.append(model)
            continue
        if model not in chains:
            arena, _ = model_series(g, model, report.m)
            chain = PolymerGlauber(arena, arena.log_weights(q, beta), rng)
            budget = sampler_budget(len(arena), epsilon / 4, c)
            chain.run(budget)
            chains[model] = (chain, thin if thin is not None else budget)
        else:
            chain, step = chains[model]
            chain.run(step)
        chain = chains[model][0]
        configs.append(polymer_to_edges(model, [chain.arena.polymers[i] for i in chain.present], g))
        picked.append(model)
    return RCSampleBatch(configs=configs, phases=picked, report=report, status=status)


def sample_rc(
    g: Graph, q: float, beta: float, epsilon: float, rng: np.random.Generator, **kwargs
) -> EdgeConfig:
    return sample_rc_many(g, q, beta, epsilon, rng, n_samples=1, **kwargs).configs[0]


def sample_potts_many(
    g: Graph, q: int, beta: float, epsilon: float, rng: np.random.Generator, n_samples: int, **kwargs
) -> List[np.ndarray]:
    """Potts colorings through the Edwards-Sokal coupling."""
    if int(q) != q or q < 1:
        raise ValueError(f"Potts sampling needs a positive integer q, got {q}")
    if q == 1:
        return [np.zeros(g.n, dtype=np.int64) for _ in range(n_samples)]
    batch = sample_rc_many(g, q, beta, epsilon, rng, n_samples=n_samples, **kwargs)
    return [edwards_sokal_color(g, a, int(q), rng) for a in batch.configs]


def sample_potts(g: Graph, q: int, beta: float, epsilon: float, rng: np.random.Generator, **kwargs) -> np.ndarray:
    return sample_potts_many(g, q, beta, epsilon, rng, n_samples=1, **kwargs)[0]
