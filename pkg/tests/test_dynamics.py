import math

import numpy as np
import pandas as pd
import pytest

from src.rcpolymer.dynamics import (
    Phase,
    Start,
    classify_phase,
    cm_step,
    cm_transition_matrix,
    conductance_estimate,
    escape_experiment,
    exact_conductance,
    mixing_time_exact,
    potts_glauber_step,
    rc_add_probability,
    rc_glauber_step,
    rc_glauber_transition_matrix,
    run_chain,
    tv_curve,
)
from src.rcpolymer.exact import rc_distribution
from src.rcpolymer.graph import EdgeConfig
from src.rcpolymer.utils import CapExceededError


def test_classify_phase():
    assert classify_phase(EdgeConfig.empty(100)) == Phase.DIS
    assert classify_phase(EdgeConfig.from_edge_ids([0], 100)) == Phase.DIS
    assert classify_phase(EdgeConfig.from_edge_ids([0, 1], 100)) == Phase.ERR
    assert classify_phase(EdgeConfig.full(100).without_edge(3)) == Phase.ORD
    assert classify_phase(EdgeConfig.from_edge_ids(range(50), 100), eta=0.49) == Phase.ERR


def test_rc_add_probability():
    assert rc_add_probability(2.0, 3.0, connected=True) == pytest.approx(2 / 3)
    assert rc_add_probability(2.0, 3.0, connected=False) == pytest.approx(2 / 5)


@pytest.mark.parametrize("name", ["c4", "k4"])
@pytest.mark.parametrize("builder", [cm_transition_matrix, rc_glauber_transition_matrix])
def test_kernels_preserve_random_cluster_measure(name, builder, request):
    g = request.getfixturevalue(name)
    q, beta = 2.5, 0.8
    P = builder(g, q, beta)
    mu = rc_distribution(g, q, beta).probs
    assert np.allclose(P.sum(axis=1), 1.0)
    assert np.allclose(mu @ P, mu, atol=1e-12)
    # Both chains are reversible.
    flow = mu[:, None] * P
    assert np.allclose(flow, flow.T, atol=1e-12)


def test_rc_glauber_step_is_single_edge(c4):
    rng = np.random.default_rng(3)
    a = EdgeConfig.full(c4.n_edges)
    for _ in range(200):
        b = rc_glauber_step(c4, a, 2.0, 1.0, rng)
        assert (a.bits ^ b.bits).bit_count() <= 1
        a = b
    # At beta = 0 an edge is never kept.
    assert rc_glauber_step(c4, EdgeConfig.full(4), 2.0, 0.0, rng).count() == 3


@pytest.mark.parametrize("name", ["k2", "c3"])
@pytest.mark.parametrize("step, steps", [(cm_step, 20000), (rc_glauber_step, 60000)])
def test_chain_histogram_matches_random_cluster_measure(name, step, steps, request):
    g = request.getfixturevalue(name)
    q, beta = 2.0, 1.0
    rng = np.random.default_rng(17)
    a = EdgeConfig.empty(g.n_edges)
    for _ in range(200):
        a = step(g, a, q, beta, rng)
    counts = np.zeros(1 << g.n_edges)
    for _ in range(steps):
        a = step(g, a, q, beta, rng)
        counts[a.bits] += 1
    mu = rc_distribution(g, q, beta).probs
    assert 0.5 * np.abs(counts / steps - mu).sum() < 0.03


def test_kernel_cap(k6):
    with pytest.raises(CapExceededError):
        cm_transition_matrix(k6, 2.0, 1.0)


def test_exact_conductance_and_mixing(c4):
    q, beta = 2.0, 1.0
    P = cm_transition_matrix(c4, q, beta)
    dist = rc_distribution(c4, q, beta)
    in_s = dist.sizes == 0
    phi = exact_conductance(P, dist.probs, in_s)
    assert 0 < phi
    curve = tv_curve(P, dist.probs, 0, 200)
    assert curve[0] == pytest.approx(1 - dist.probs[0])
    assert curve[-1] < 1e-6
    t_mix = mixing_time_exact(P, dist.probs)
    assert t_mix is not None and 1 <= t_mix <= 200
    with pytest.raises(ValueError):
        exact_conductance(P, dist.probs, np.ones(len(dist.probs), dtype=bool))


def test_cm_step_validation(c4):
    with pytest.raises(ValueError):
        cm_step(c4, EdgeConfig.empty(4), 0.5, 1.0, np.random.default_rng(0))


def test_cm_step_q_one_resamples_everything(c4):
    # q = 1 activates every component, so the next state is plain percolation.
    rng = np.random.default_rng(4)
    full = sum(cm_step(c4, EdgeConfig.empty(4), 1.0, 50.0, rng) == EdgeConfig.full(4) for _ in range(20))
    assert full == 20


def test_run_chain_trajectory(c4):
    frame = run_chain(c4, 2.0, 1.0, "cm", Start.FULL, steps=10, rng=np.random.default_rng(1), record_every=5)
    assert list(frame.columns) == ["trial", "step", "size", "phase"]
    assert frame["step"].tolist() == [0, 5, 10]
    assert frame.loc[0, "size"] == 4
    assert frame.loc[0, "phase"] == "ORD"
    again = run_chain(c4, 2.0, 1.0, "cm", Start.FULL, steps=10, rng=np.random.default_rng(1), record_every=5)
    pd.testing.assert_frame_equal(frame, again)


def test_run_chain_potts_start(k4):
    frame = run_chain(k4, 3, 1.0, "potts-glauber", Start.FULL, steps=0, rng=np.random.default_rng(0))
    assert frame.loc[0, "size"] == 6
    with pytest.raises(ValueError):
        run_chain(k4, 3, 1.0, "swendsen-wang", Start.FULL, steps=1, rng=np.random.default_rng(0))


def test_potts_glauber_k2_marginal(k2):
    beta = 1.0
    rng = np.random.default_rng(8)
    sigma = np.array([0, 1])
    same = 0
    for _ in range(20000):
        sigma = potts_glauber_step(k2, sigma, 2, beta, rng)
        same += int(sigma[0] == sigma[1])
    assert same / 20000 == pytest.approx(math.exp(beta) / (math.exp(beta) + 1), abs=0.03)


def test_escape_experiment_accounting(k4):
    report = escape_experiment(k4, 2.0, 0.3, "cm", Start.FULL, trials=8, max_steps=30, seed=3)
    assert report.never_left + sum(report.first_escape_histogram.values()) == 8
    assert sum(report.phase_occupancy.values()) == pytest.approx(1.0)
    assert report.escape_count >= 0
    parallel = escape_experiment(k4, 2.0, 0.3, "cm", Start.FULL, trials=8, max_steps=30, seed=3, n_jobs=2)
    assert parallel == report


def test_escape_experiment_unknown_kernel(k4):
    with pytest.raises(ValueError):
        escape_experiment(k4, 2.0, 0.3, "heat", Start.EMPTY, trials=1, max_steps=1)


def test_conductance_estimate_matches_exact(c4):
    q, beta = 2.0, 1.0
    report = conductance_estimate(c4, q, beta, trials=4000, rng=np.random.default_rng(12))
    assert report.method == "exact-table"
    dist = rc_distribution(c4, q, beta)
    in_s = dist.sizes <= 0.01 * c4.n_edges
    exact = exact_conductance(cm_transition_matrix(c4, q, beta), dist.probs, in_s)
    assert abs(report.estimate - exact) <= 5 * report.stderr + 1e-3
    assert report.ci_low <= report.estimate <= report.ci_high
    assert report.mu_dis + report.mu_rest == pytest.approx(1.0)
