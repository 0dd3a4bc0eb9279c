import logging
import math
from collections import Counter, deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Optional, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict

from .engine import log_z_tilde, model_series, PolymerGlauber, polymer_to_edges, sampler_budget
from .exact import DEFAULT_DISTRIBUTION_EDGE_CAP, DEFAULT_ETA, monochromatic_edges, rc_distribution
from .graph import EdgeConfig, Graph, components
from .utils import CapExceededError, make_rng

logger = logging.getLogger(__name__)

# Exact kernels enumerate 2^|E| states.
DEFAULT_KERNEL_EDGE_CAP = 10
DEFAULT_TV_THRESHOLD = 0.25

KERNELS = ("cm", "rc-glauber", "potts-glauber")


class Phase(str, Enum):
    DIS = "DIS"
    ORD = "ORD"
    ERR = "ERR"


class Start(str, Enum):
    EMPTY = "EMPTY"
    FULL = "FULL"


State = Union[EdgeConfig, np.ndarray]


@dataclass
class ChainState:
    state: State
    step: int = 0
    stream: int = 0


def classify_phase(a: EdgeConfig, eta: float = DEFAULT_ETA) -> Phase:
    size = a.count()
    if size <= eta * a.n_edges:
        return Phase.DIS
    if size >= (1 - eta) * a.n_edges:
        return Phase.ORD
    return Phase.ERR


# ----------------------------- Kernels ----------------------------- #

def cm_step(g: Graph, a: EdgeConfig, q: float, beta: float, rng: np.random.Generator) -> EdgeConfig:
    """One Chayes-Machta step.

    Components are activated independently with probability 1/q; edges
    between active vertices are removed and re-added with p = 1 - e^-beta.
    """
    if q < 1:
        raise ValueError(f"CM dynamics needs q >= 1, got {q}")
    labels, c = components(g, a)
    active_component = rng.random(c) < 1.0 / q
    active = active_component[np.asarray(labels, dtype=np.int64)]
    us, vs = g.endpoints
    resample = active[us] & active[vs]
    fresh = rng.random(g.n_edges) < -math.expm1(-beta)
    return EdgeConfig.from_array(np.where(resample, fresh, a.to_array()))


def _connected_without(g: Graph, bits: int, edge: int) -> bool:
    """Are the endpoints of edge joined by present edges other than edge itself?"""
    source, target = g.edges[edge]
    seen = {source}
    queue = deque([source])
    while queue:
        x = queue.popleft()
        for y, e in g.adjacency[x]:
            if e == edge or not (bits >> e) & 1 or y in seen:
                continue
            if y == target:
                return True
            seen.add(y)
            queue.append(y)
    return False


def rc_add_probability(x: float, q: float, connected: bool) -> float:
    """Heat-bath probability that e is present given the rest of the configuration."""
    return x / (x + (1.0 if connected else q))


def rc_glauber_step(g: Graph, a: EdgeConfig, q: float, beta: float, rng: np.random.Generator) -> EdgeConfig:
    e = int(rng.integers(g.n_edges))
    p_add = rc_add_probability(math.expm1(beta), q, _connected_without(g, a.bits, e))
    if rng.random() < p_add:
        return a.with_edge(e)
    return a.without_edge(e)


def _potts_update(g: Graph, sigma: np.ndarray, q: int, beta: float, rng: np.random.Generator) -> None:
    v = int(rng.integers(g.n))
    counts = np.bincount(sigma[g.neighbors(v)], minlength=q) if g.degree(v) else np.zeros(q)
    logits = beta * counts
    weights = np.exp(logits - logits.max())
    cumulative = np.cumsum(weights)
    sigma[v] = min(int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right")), q - 1)


def potts_glauber_step(g: Graph, sigma: np.ndarray, q: int, beta: float, rng: np.random.Generator) -> np.ndarray:
    """Resample one uniform vertex from its conditional law given the neighbors."""
    sigma = np.array(sigma, dtype=np.int64, copy=True)
    _potts_update(g, sigma, int(q), beta, rng)
    return sigma


def initial_state(g: Graph, kernel: str, start: Start, q: float, rng: np.random.Generator) -> State:
    start = Start(start)
    if kernel == "potts-glauber":
        if start == Start.FULL:
            return np.zeros(g.n, dtype=np.int64)
        return rng.integers(int(q), size=g.n)
    return EdgeConfig.full(g.n_edges) if start == Start.FULL else EdgeConfig.empty(g.n_edges)


def make_stepper(g: Graph, kernel: str, q: float, beta: float) -> Callable[[State, np.random.Generator], State]:
    if kernel == "cm":
        return lambda s, rng: cm_step(g, s, q, beta, rng)
    if kernel == "rc-glauber":
        return lambda s, rng: rc_glauber_step(g, s, q, beta, rng)
    if kernel == "potts-glauber":
        def step(sigma, rng):
            _potts_update(g, sigma, int(q), beta, rng)
            return sigma
        return step
    raise ValueError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")


def edge_view(g: Graph, state: State) -> EdgeConfig:
    """Edge configuration of a state (monochromatic edges for colorings)."""
    if isinstance(state, EdgeConfig):
        return state
    return monochromatic_edges(g, state)


def run_chain(
    g: Graph,
    q: float,
    beta: float,
    kernel: str,
    start: Start,
    steps: int,
    rng: np.random.Generator,
    record_every: int = 1,
    eta: float = DEFAULT_ETA,
    trial: int = 0,
) -> pd.DataFrame:
    """Trajectory rows (trial, step, size, phase) every record_every steps, step 0 included."""
    stepper = make_stepper(g, kernel, q, beta)
    chain = ChainState(initial_state(g, kernel, start, q, rng), stream=trial)
    rows = []
    while True:
        if chain.step % record_every == 0:
            view = edge_view(g, chain.state)
            rows.append((chain.stream, chain.step, view.count(), classify_phase(view, eta).value))
        if chain.step == steps:
            break
        chain.state = stepper(chain.state, rng)
        chain.step += 1
    return pd.DataFrame(rows, columns=["trial", "step", "size", "phase"])


# ----------------------------- Escape experiments ----------------------------- #

class EscapeReport(BaseModel):
    kernel: str
    start: Start
    trials: int
    max_steps: int
    escape_count: int
    first_escape_histogram: Dict[int, int]
    never_left: int
    phase_occupancy: Dict[str, float]
    flips_per_trial: float


def _escape_trial(g, q, beta, kernel, start, max_steps, eta, seed, trial):
    rng = make_rng(seed, trial)
    stepper = make_stepper(g, kernel, q, beta)
    state = initial_state(g, kernel, start, q, rng)
    home = Phase.ORD if start == Start.FULL else Phase.DIS
    away = Phase.DIS if home == Phase.ORD else Phase.ORD
    previous = classify_phase(edge_view(g, state), eta)
    last_pure = previous
    escapes, flips, first_departure = 0, 0, None
    occupancy = Counter()
    for t in range(1, max_steps + 1):
        state = stepper(state, rng)
        phase = classify_phase(edge_view(g, state), eta)
        occupancy[phase.value] += 1
        if previous == home and phase == away:
            escapes += 1
        if first_departure is None and phase != home:
            first_departure = t
        if phase != Phase.ERR and phase != last_pure:
            flips += 1
            last_pure = phase
        previous = phase
    return escapes, first_departure, occupancy, flips


def escape_experiment(
    g: Graph,
    q: float,
    beta: float,
    kernel: str,
    start: Start,
    trials: int,
    max_steps: int,
    eta: float = DEFAULT_ETA,
    seed: int = 0,
    n_jobs: int = 1,
) -> EscapeReport:
    """Independent chains from A = empty or A = E.

    escape_count counts single steps from the starting phase straight into the
    opposite one; first_escape_histogram bins the first step at which a chain
    left its starting phase. Trial t uses the stream (seed, t).
    """
    start = Start(start)
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")
    results = Parallel(n_jobs=n_jobs)(
        delayed(_escape_trial)(g, q, beta, kernel, start, max_steps, eta, seed, t) for t in range(trials)
    )
    histogram: Counter = Counter()
    occupancy: Counter = Counter()
    escapes = flips = never = 0
    for esc, first, occ, fl in results:
        escapes += esc
        flips += fl
        occupancy.update(occ)
        if first is None:
            never += 1
        else:
            histogram[first] += 1
    total = max(1, trials * max_steps)
    report = EscapeReport(
        kernel=kernel,
        start=start,
        trials=trials,
        max_steps=max_steps,
        escape_count=escapes,
        first_escape_histogram=dict(sorted(histogram.items())),
        never_left=never,
        phase_occupancy={p.value: occupancy[p.value] / total for p in Phase},
        flips_per_trial=flips / max(1, trials),
    )
    logger.info(f"escape experiment {kernel} from {start.value}: {escapes} escapes over {trials} trials")
    return report


# ----------------------------- Exact kernels ----------------------------- #

def _check_kernel_cap(g: Graph, cap: int):
    if g.n_edges > cap:
        raise CapExceededError(f"exact transition matrices limited to |E| <= {cap}, got {g.n_edges}")


def cm_transition_matrix(g: Graph, q: float, beta: float, cap: int = DEFAULT_KERNEL_EDGE_CAP) -> np.ndarray:
    """P[A, B] for the Chayes-Machta chain, states indexed by edge bitmask."""
    _check_kernel_cap(g, cap)
    n_states = 1 << g.n_edges
    p = -math.expm1(-beta)
    P = np.zeros((n_states, n_states))
    for a in range(n_states):
        labels, c = components(g, EdgeConfig(a, g.n_edges))
        for active_set in range(1 << c):
            k = bin(active_set).count("1")
            p_act = (1 / q) ** k * (1 - 1 / q) ** (c - k)
            if p_act == 0:
                continue
            movable = 0
            for e, (u, v) in enumerate(g.edges):
                if (active_set >> labels[u]) & 1 and (active_set >> labels[v]) & 1:
                    movable |= 1 << e
            base = a & ~movable
            n_movable = bin(movable).count("1")
            sub = movable
            while True:
                r = bin(sub).count("1")
                P[a, base | sub] += p_act * p**r * (1 - p) ** (n_movable - r)
                if sub == 0:
                    break
                sub = (sub - 1) & movable
    return P


def rc_glauber_transition_matrix(g: Graph, q: float, beta: float, cap: int = DEFAULT_KERNEL_EDGE_CAP) -> np.ndarray:
    _check_kernel_cap(g, cap)
    n_states = 1 << g.n_edges
    x = math.expm1(beta)
    P = np.zeros((n_states, n_states))
    for a in range(n_states):
        for e in range(g.n_edges):
            p_add = rc_add_probability(x, q, _connected_without(g, a, e))
            P[a, a | (1 << e)] += p_add / g.n_edges
            P[a, a & ~(1 << e)] += (1 - p_add) / g.n_edges
    return P


def exact_conductance(P: np.ndarray, mu: np.ndarray, in_set: np.ndarray) -> float:
    """sum_{A in S} mu(A) P(A, S^c) / (mu(S) mu(S^c))."""
    in_set = np.asarray(in_set, dtype=bool)
    mu_s, mu_sc = mu[in_set].sum(), mu[~in_set].sum()
    if mu_s == 0 or mu_sc == 0:
        raise ValueError("conductance undefined when one side has zero mass")
    flow = float(mu[in_set] @ P[np.ix_(in_set, ~in_set)].sum(axis=1))
    return flow / (mu_s * mu_sc)


def tv_curve(P: np.ndarray, mu: np.ndarray, start: int, t_max: int) -> np.ndarray:
    """TV(P^t(start, .), mu) for t = 0..t_max."""
    dist = np.zeros(len(mu))
    dist[start] = 1.0
    out = [0.5 * np.abs(dist - mu).sum()]
    for _ in range(t_max):
        dist = dist @ P
        out.append(0.5 * np.abs(dist - mu).sum())
    return np.asarray(out)


def mixing_time_exact(
    P: np.ndarray, mu: np.ndarray, threshold: float = DEFAULT_TV_THRESHOLD, t_max: int = 100_000
) -> Optional[int]:
    """Smallest t with worst-start TV distance to mu at most threshold."""
    dist = np.eye(len(mu))
    for t in range(t_max + 1):
        if 0.5 * np.abs(dist - mu).sum(axis=1).max() <= threshold:
            return t
        dist = dist @ P
    return None


# ----------------------------- Conductance ----------------------------- #

class ConductanceReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    estimate: float
    stderr: float
    ci_low: float
    ci_high: float
    mu_dis: float
    mu_rest: float
    leave_fraction: float
    trials: int
    one_sided: bool
    method: str


def _report(leaves: int, trials: int, mu_s: float, mu_sc: float, method: str) -> ConductanceReport:
    frac = leaves / trials
    se_frac = math.sqrt(frac * (1 - frac) / trials)
    one_sided = mu_sc <= 0
    if one_sided:
        # Only the escape probability is measurable; report it as a bound on the numerator.
        estimate, stderr = frac, se_frac
    else:
        estimate, stderr = frac / mu_sc, se_frac / mu_sc
    return ConductanceReport(
        estimate=estimate,
        stderr=stderr,
        ci_low=max(0.0, estimate - 2 * stderr),
        ci_high=estimate + 2 * stderr,
        mu_dis=mu_s,
        mu_rest=mu_sc,
        leave_fraction=frac,
        trials=trials,
        one_sided=one_sided,
        method=method,
    )


def conductance_estimate(
    g: Graph,
    q: float,
    beta: float,
    trials: int,
    rng: np.random.Generator,
    eta: float = DEFAULT_ETA,
    epsilon: float = 0.1,
    m: Optional[int] = None,
    force: bool = False,
    oracle_cap: int = DEFAULT_DISTRIBUTION_EDGE_CAP,
) -> ConductanceReport:
    """Monte-Carlo estimate of the CM conductance of the disordered phase.

    A is drawn from mu conditioned on Omega_dis (exact table at oracle scale,
    otherwise the disordered polymer chain), one CM step is taken, and the
    fraction of steps leaving Omega_dis is divided by mu(Omega_dis^c).
    """
    if g.n_edges <= oracle_cap:
        dist = rc_distribution(g, q, beta)
        in_s = dist.sizes <= eta * g.n_edges
        mu_s = float(dist.probs[in_s].sum())
        mu_sc = float(dist.probs[~in_s].sum())
        states = np.nonzero(in_s)[0]
        picks = rng.choice(states, size=trials, p=dist.probs[states] / mu_s)
        leaves = sum(
            1 for a in picks.tolist()
            if classify_phase(cm_step(g, EdgeConfig(int(a), g.n_edges), q, beta, rng), eta) != Phase.DIS
        )
        return _report(leaves, trials, mu_s, mu_sc, "exact-table")

    report = log_z_tilde(g, q, beta, epsilon, m=m, force=force)
    probs = report.phase_probabilities()
    mu_s = probs.get("dis", 0.0)
    if mu_s == 0.0:
        logger.warning("disordered phase inactive in this regime; conductance reported as one-sided")
        return ConductanceReport(estimate=0.0, stderr=0.0, ci_low=0.0, ci_high=0.0, mu_dis=0.0, mu_rest=1.0,
                                 leave_fraction=0.0, trials=0, one_sided=True, method="engine")
    arena, _ = model_series(g, "dis", report.m)
    chain = PolymerGlauber(arena, arena.log_weights(q, beta), rng)
    budget = sampler_budget(len(arena), epsilon / 4)
    chain.run(budget)
    leaves = 0
    for _ in range(trials):
        chain.run(max(1, len(arena)))
        a = polymer_to_edges("dis", [arena.polymers[i] for i in chain.present], g)
        if classify_phase(cm_step(g, a, q, beta, rng), eta) != Phase.DIS:
            leaves += 1
    return _report(leaves, trials, mu_s, 1.0 - mu_s, "engine")
