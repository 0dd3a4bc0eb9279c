import math
from collections import Counter

import numpy as np
import pytest

from src.rcpolymer.engine import (
    GraphClassError,
    PolymerGlauber,
    Regime,
    active_models,
    choose_m,
    epsilon_split,
    log_z_tilde,
    polymer_to_edges,
    regime,
    regime_window,
    sample_polymer_config,
    sample_potts,
    sample_potts_many,
    sample_rc,
    sample_rc_many,
    sampler_budget,
)
from src.rcpolymer.exact import rc_distribution, z_rc_exact
from src.rcpolymer.graph import EdgeConfig, Graph
from src.rcpolymer.polymers import (
    DisPolymer,
    PolymerArena,
    compatible,
    enumerate_dis_polymers,
    enumerate_ord_polymers,
    polymer_arena,
)
from src.rcpolymer.utils import CapExceededError


def test_regime_window_and_labels():
    beta0, beta1 = regime_window(1e6, 5)
    assert beta0 == pytest.approx(math.log1p(1e6**0.38))
    assert beta1 == pytest.approx(math.log1p(1e6**0.42))
    assert regime(1e6, 5, beta0 / 2).regime == Regime.DIS_ONLY
    assert regime(1e6, 5, (beta0 + beta1) / 2).regime == Regime.BOTH
    assert regime(1e6, 5, 2 * beta1).regime == Regime.ORD_ONLY
    assert active_models(Regime.BOTH) == ["dis", "ord"]
    with pytest.raises(ValueError):
        regime_window(1.0, 5)


def test_choose_m():
    m = choose_m(100, 0.1, 1e6, 5)
    assert 100 * 1e6 ** (-m / 1000) <= 0.1 / 4
    assert 100 * 1e6 ** (-(m - 1) / 1000) > 0.1 / 4
    assert choose_m(100, 0.1, 1e6, 5, cap=6) == 6
    with pytest.raises(ValueError):
        choose_m(100, 0.0, 1e6, 5)


def test_epsilon_split_adds_up():
    assert sum(epsilon_split(0.2).values()) == pytest.approx(0.2)


def test_beta_zero_count(k6):
    report = log_z_tilde(k6, 100.0, 0.0, epsilon=0.1)
    assert report.log_ztilde == pytest.approx(6 * math.log(100))
    assert report.regime == Regime.DIS_ONLY
    assert report.active_terms == ["dis"]
    assert "DEGRADED" in report.status
    assert report.m < report.m_required


@pytest.mark.parametrize("where", ["dis", "both", "ord"])
def test_log_z_tilde_close_to_exact(k6, where):
    q = 1e6
    beta0, beta1 = regime_window(q, k6.delta)
    beta = {"dis": beta0 / 2, "both": (beta0 + beta1) / 2, "ord": 1.25 * beta1}[where]
    report = log_z_tilde(k6, q, beta, epsilon=0.1, m=4)
    exact = z_rc_exact(k6, q, beta)
    assert abs(report.log_ztilde - exact.log_z) < 1e-3
    assert report.method == "expansion"
    assert sum(report.phase_probabilities().values()) == pytest.approx(1.0)


def test_brute_force_branch(c3):
    report = log_z_tilde(c3, 10.0, 1.0, epsilon=0.1)
    assert report.method == "brute_force"
    assert report.status == ["BRUTE_FORCE"]
    assert report.log_ztilde == pytest.approx(z_rc_exact(c3, 10.0, 1.0).log_z)


def test_class_gate():
    edges = [(a + s, b + s) for s in (0, 4) for a in range(4) for b in range(a + 1, 4)]
    two_k4 = Graph(8, edges, delta=3)
    with pytest.raises(GraphClassError):
        log_z_tilde(two_k4, 1e6, 1.0, epsilon=0.1)
    report = log_z_tilde(two_k4, 1e6, 1.0, epsilon=0.1, m=3, force=True)
    assert report.log_ztilde > 0


def test_class_gate_uses_given_caps(petersen):
    # Without the exact profile or the small-set search, the spectral bound alone cannot certify phi(0.2).
    with pytest.raises(GraphClassError):
        log_z_tilde(petersen, 1e6, 1.0, epsilon=0.1, m=2, exact_cap=4, small_set_cap=0)


def test_truncation_above_cap_is_rejected(k6):
    beta0, beta1 = regime_window(1e6, 5)
    with pytest.raises(CapExceededError):
        log_z_tilde(k6, 1e6, (beta0 + beta1) / 2, epsilon=0.1, m=20)


def test_sampler_budget():
    assert sampler_budget(0, 0.1) == 0
    assert sampler_budget(10, 0.1, c=2) == math.ceil(2 * 10 * math.log(100))


def test_polymer_glauber_stationary_law():
    # Two incompatible polymers with weights 1 and 2: P = (1, 1, 2) / 4.
    a = DisPolymer(vertices=(0, 1), edge_ids=(0,))
    b = DisPolymer(vertices=(1, 2), edge_ids=(1,))
    arena = PolymerArena([a, b], log_weights=[0.0, math.log(2.0)])
    chain = PolymerGlauber(arena, arena.log_weights(), np.random.default_rng(5))
    counts = Counter()
    for _ in range(30000):
        chain.run(1)
        counts[tuple(chain.configuration())] += 1
    total = sum(counts.values())
    assert counts[()] / total == pytest.approx(0.25, abs=0.03)
    assert counts[(0,)] / total == pytest.approx(0.25, abs=0.03)
    assert counts[(1,)] / total == pytest.approx(0.5, abs=0.03)
    assert (0, 1) not in counts


def test_sample_polymer_config(k4):
    empty = sample_polymer_config(k4, 10.0, 0.0, "dis", 2, np.random.default_rng(0))
    assert empty.ids == [] and empty.steps == 0
    arena = polymer_arena(k4, "dis", 2)
    sample = sample_polymer_config(k4, 10.0, 3.0, "dis", 2, np.random.default_rng(1), arena=arena)
    assert sample.steps == sampler_budget(len(arena), 0.025)
    assert all(compatible(a, b) for i, a in enumerate(sample.polymers) for b in sample.polymers[i + 1 :])


def test_polymer_to_edges(c3):
    dis = enumerate_dis_polymers(c3, 1)
    assert polymer_to_edges("dis", dis[:2], c3).count() == 2
    ordp = enumerate_ord_polymers(c3, 1)
    assert polymer_to_edges("ord", ordp[:1], c3).count() == 2
    assert polymer_to_edges("ord", [], c3) == EdgeConfig.full(3)
    with pytest.raises(ValueError):
        polymer_to_edges("err", [], c3)


def test_sampler_matches_exact_distribution_c3(c3):
    q, beta = 100.0, 5.0
    rng = np.random.default_rng(2024)
    batch = sample_rc_many(c3, q, beta, 0.5, rng, n_samples=4000, m=3, thin=20)
    assert set(batch.phases) == {"ord"}
    counts = Counter(a.bits for a in batch.configs)
    exact = rc_distribution(c3, q, beta).probs
    tv = 0.5 * sum(abs(counts.get(bits, 0) / 4000 - exact[bits]) for bits in range(8))
    assert tv < 0.03


@pytest.mark.parametrize("name", ["k2", "c3", "c4"])
@pytest.mark.parametrize("q", [3.0, 100.0])
@pytest.mark.parametrize("beta", [0.5, 3.0])
def test_exact_draws_below_brute_force_threshold(name, q, beta, request):
    g = request.getfixturevalue(name)
    batch = sample_rc_many(g, q, beta, 0.1, np.random.default_rng(11), n_samples=5000)
    assert batch.report.method == "brute_force"
    assert set(batch.phases) <= {"dis", "ord", "err"}
    counts = Counter(a.bits for a in batch.configs)
    exact = rc_distribution(g, q, beta).probs
    tv = 0.5 * sum(abs(counts.get(bits, 0) / 5000 - p) for bits, p in enumerate(exact))
    assert tv < 0.05


def test_sample_rc_and_potts_at_default_epsilon(k2, c4):
    rng = np.random.default_rng(4)
    assert sample_rc(k2, 3.0, 1.0, 0.1, rng).n_edges == 1
    assert sample_rc(c4, 100.0, 1.0, 0.1, rng).n_edges == 4
    coloring = sample_potts(c4, 3, 1.0, 0.1, rng)
    assert coloring.shape == (4,)
    assert set(coloring.tolist()) <= {0, 1, 2}


def test_sample_rc_is_reproducible(k6):
    beta0, _ = regime_window(1e6, 5)
    first = sample_rc(k6, 1e6, beta0, 0.1, np.random.default_rng(9), m=3)
    second = sample_rc(k6, 1e6, beta0, 0.1, np.random.default_rng(9), m=3)
    assert first == second


def test_potts_samples(k6):
    assert all((s == 0).all() for s in sample_potts_many(k6, 1, 1.0, 0.1, np.random.default_rng(0), 3))
    with pytest.raises(ValueError):
        sample_potts_many(k6, 2.5, 1.0, 0.1, np.random.default_rng(0), 1)
    _, beta1 = regime_window(1e6, 5)
    colorings = sample_potts_many(k6, 10**6, 2 * beta1, 0.1, np.random.default_rng(1), 5, m=3)
    # Deep in the ordered regime the random-cluster sample is almost surely full.
    assert all(len(set(c.tolist())) == 1 for c in colorings)
