import math

import numpy as np
import pytest

from src.rcpolymer.cluster_expansion import xi_brute
from src.rcpolymer.engine import regime_window
from src.rcpolymer.exact import z_rc_exact
from src.rcpolymer.phase import (
    TreeSpec,
    alpha_bound,
    alpha_k,
    beta_c_first_order,
    beta_c_potts_formula,
    beta_c_solve,
    beta_c_table,
    build_tree,
    expected_cycle_mean,
    f_dis_closed,
    f_dis_truncated,
    f_ord_truncated,
    free_tree_edge_prob,
    phase_grid,
    sample_W,
)
from src.rcpolymer.polymers import polymer_arena


def test_build_tree_sizes():
    tree = build_tree(TreeSpec(delta=5, depth=2))
    assert tree.n == 1 + 5 + 20
    assert tree.n_edges == tree.n - 1
    assert len(tree.boundary_marks) == 20
    assert tree.degree(0) == 5
    assert tree.is_regular


def test_build_tree_edge_ids_follow_depth():
    tree = build_tree(TreeSpec(delta=4, depth=3))
    dist = tree.distances_from(0)
    depths = [min(dist[u], dist[v]) for u, v in tree.edges]
    assert depths == sorted(depths)


def test_cycle_rooted_tree():
    tree = build_tree(TreeSpec(delta=3, depth=2, cycle_length=4))
    # 4 cycle vertices, one child each, then two grandchildren each.
    assert tree.n == 4 + 4 + 8
    assert tree.n_edges == tree.n
    assert len(tree.boundary_marks) == 8
    assert tree.is_regular
    with pytest.raises(ValueError):
        build_tree(TreeSpec(delta=3, depth=2, cycle_length=2))
    with pytest.raises(ValueError):
        build_tree(TreeSpec(delta=2, depth=2, cycle_length=4))


def test_wired_star_partition_function():
    star = build_tree(TreeSpec(delta=3, depth=1))
    q, beta = 7.0, 1.5
    x = math.expm1(beta)
    xi = xi_brute(polymer_arena(star, "ord", 3), q, beta)
    assert xi == pytest.approx(math.log(1 + 3 / x + 3 / x**2 + q / x**3))
    wired = z_rc_exact(star, q, beta, boundary="wired").log_z
    assert wired == pytest.approx(math.log(q) + 3 * math.log(x) + xi)


@pytest.mark.parametrize("q, beta", [(50.0, 1.0), (1e4, 3.0)])
def test_f_dis_truncated_matches_taylor_series(q, beta):
    delta, m = 3, 3
    t = math.expm1(beta) / q
    taylor = math.log(q) + delta / 2 * sum((-1) ** (j - 1) * t**j / j for j in range(1, m))
    assert f_dis_truncated(q, beta, delta, m) == pytest.approx(taylor, rel=1e-12)
    assert abs(f_dis_truncated(q, beta, delta, m) - f_dis_closed(q, beta, delta)) < delta * t**m


def test_f_ord_leading_term_and_flags():
    q, delta = 1e6, 5
    beta0, beta1 = regime_window(q, delta)
    result = f_ord_truncated(q, beta1, delta, 1)
    assert result.value == pytest.approx(delta / 2 * math.log(math.expm1(beta1)))
    assert result.verified
    assert result.tail_bound == pytest.approx(q ** (-1 / 1000))
    assert not f_ord_truncated(q, beta0 / 2, delta, 1).verified
    with pytest.raises(ValueError):
        f_ord_truncated(q, 0.0, delta, 2)
    with pytest.raises(ValueError):
        f_ord_truncated(q, beta1, delta, 3, depth=2)


def test_beta_c_closed_forms():
    q, delta = 1e8, 5
    assert beta_c_first_order(q, delta) == pytest.approx(7.369, abs=1e-3)
    assert beta_c_potts_formula(q, delta) == pytest.approx(2 * math.log(q) / delta, rel=0.01)
    with pytest.raises(ValueError):
        beta_c_potts_formula(2.0, delta)
    with pytest.raises(ValueError):
        beta_c_first_order(10.0, 2)


def test_beta_c_solve_in_window():
    q, delta = 1e8, 5
    result = beta_c_solve(q, delta, m=4, tol=1e-4)
    assert result.beta0 < result.beta_c < result.beta1
    assert result.hi - result.lo <= 1e-4
    assert result.beta_c == pytest.approx(2 * math.log(q) / delta, rel=0.05)
    assert result.beta_c == pytest.approx(beta_c_first_order(q, delta), abs=0.01)


@pytest.mark.parametrize("q", [1e4, 1e8, 1e12])
def test_beta_c_solve_without_clusters_is_first_order(q):
    result = beta_c_solve(q, 5, m=1)
    assert result.hi - result.lo <= 1e-10
    assert abs(result.beta_c - beta_c_first_order(q, 5)) <= 1e-10


def test_free_tree_edge_prob():
    assert free_tree_edge_prob(3.0, math.log(4)) == pytest.approx(0.5)


def test_alpha_k_vanishes_outside_range():
    assert alpha_k("dis", 3, 100.0, 1.0, 3, m=3) == 0.0
    assert alpha_k("dis", 3, 100.0, 0.0, 3, m=5) == 0.0


def test_alpha_dis_led_by_cycle_polymer():
    # The 3-cycle is the only polymer with as many vertices as edges.
    q, beta = 1e5, 1.0
    x = math.expm1(beta)
    assert alpha_k("dis", 3, q, beta, 3, m=4) == pytest.approx(x**3 / q**2, rel=0.05)


def test_alpha_ord_within_bound():
    q, delta = 1e4, 3
    _, beta1 = regime_window(q, delta)
    value = alpha_k("ord", 3, q, 1.5 * beta1, delta, m=4)
    assert abs(value) <= alpha_bound(3, q, delta)


@pytest.mark.parametrize("model", ["dis", "ord"])
def test_alpha_k_within_bound_at_large_q(model):
    q, delta = 1e8, 5
    beta = beta_c_first_order(q, delta)
    for k in range(3, 7):
        assert abs(alpha_k(model, k, q, beta, delta, m=4)) <= alpha_bound(k, q, delta)


def test_sample_W_concentrates_at_critical_point():
    q, delta, m = 1e10, 5, 4
    beta_c = beta_c_solve(q, delta, m, tol=1e-6).beta_c
    sample = sample_W("both", q, beta_c, delta, m, 6, 10_000, np.random.default_rng(3))
    assert np.median(np.abs(sample.q_ratio - 1)) <= 0.1


def test_sample_W_with_zero_coefficients():
    ks = 4
    zeros = {"dis": np.zeros(ks), "ord": np.zeros(ks)}
    sample = sample_W("both", 1e6, 1.0, 5, 4, 6, 4000, np.random.default_rng(0), alphas=zeros)
    assert sample.k_values.tolist() == [3, 4, 5, 6]
    assert np.allclose(sample.Q, 1e6)
    assert np.allclose(sample.w, math.log(1e6))
    assert sample.y[:, 0].mean() == pytest.approx(expected_cycle_mean(5, 3), abs=0.3)
    frame = sample.to_frame()
    assert list(frame.columns) == ["Y_3", "Y_4", "Y_5", "Y_6", "W_dis", "W_ord", "W", "Q"]


def test_sample_W_linear_in_counts():
    alphas = {"dis": [0.1, 0.0, 0.0, 0.0], "ord": [0.2, 0.0, 0.0, 0.0]}
    sample = sample_W("both", 100.0, 1.0, 5, 4, 6, 50, np.random.default_rng(1), alphas=alphas)
    y3 = sample.y[:, 0]
    assert np.allclose(sample.w_dis, 0.1 * y3)
    assert np.allclose(sample.w_ord, math.log(100.0) + 0.2 * y3)
    assert np.allclose(sample.Q, 100.0 * np.exp(0.1 * y3))
    with pytest.raises(ValueError):
        sample_W("err", 100.0, 1.0, 5, 4, 6, 1, np.random.default_rng(1))


def test_phase_grid():
    q, delta = 1e6, 5
    beta0, beta1 = regime_window(q, delta)
    frame = phase_grid(q, delta, 2, [0.0, beta0, beta1])
    assert list(frame.columns) == ["beta", "f_dis", "f_ord", "g", "regime"]
    assert math.isnan(frame.loc[0, "f_ord"])
    assert frame.loc[0, "f_dis"] == pytest.approx(math.log(q))
    assert frame.loc[1, "g"] < 0 < frame.loc[2, "g"]


def test_beta_c_table():
    frame = beta_c_table([1e6, 1e8], 5, 2)
    assert frame["status"].tolist() == ["ok", "ok"]
    assert (frame["beta_c"] - frame["beta_c_first_order"]).abs().max() < 0.01
    assert list(frame.columns) == [
        "q",
        "m",
        "beta_c",
        "beta_c_first_order",
        "beta_c_formula",
        "two_log_q_over_delta",
        "status",
    ]
