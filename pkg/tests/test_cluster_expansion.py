import math
from fractions import Fraction

import pytest

from src.rcpolymer.cluster_expansion import (
    cluster_series,
    cluster_sum,
    connected_signed_sum,
    default_kp_rate,
    enumerate_clusters,
    kp_check,
    tail_bound,
    truncated_log_xi,
    ursell,
    ursell_exact,
    xi_brute,
)
from src.rcpolymer.exact import z_rc_exact
from src.rcpolymer.polymers import DisPolymer, PolymerArena, polymer_arena
from src.rcpolymer.utils import BudgetExceededError, CapExceededError


@pytest.mark.parametrize(
    "n, edges, expected",
    [
        (1, [], Fraction(1)),
        (2, [], Fraction(0)),
        (2, [(0, 1)], Fraction(-1, 2)),
        (3, [(0, 1), (1, 2)], Fraction(1, 6)),
        (3, [(0, 1), (1, 2), (0, 2)], Fraction(1, 3)),
    ],
)
def test_ursell_small_graphs(n, edges, expected):
    assert ursell_exact(n, edges) == expected
    assert ursell(n, edges) == pytest.approx(float(expected))


def test_connected_signed_sum_complete_graphs():
    # (-1)^(n-1) (n-1)! for K_n
    for n in range(1, 7):
        edges = [(a, b) for a in range(n) for b in range(a + 1, n)]
        assert connected_signed_sum(n, edges) == (-1) ** (n - 1) * math.factorial(n - 1)
    with pytest.raises(CapExceededError):
        connected_signed_sum(11, [])


def test_single_polymer_series_is_log_one_plus_w():
    w = 0.1
    arena = PolymerArena([DisPolymer(vertices=(0, 1), edge_ids=(0,))], log_weights=[math.log(w)])
    result = truncated_log_xi(arena, None, None, m=10)
    assert result.value == pytest.approx(math.log1p(w), abs=1e-9)
    assert result.tail_bound == math.inf
    clusters = list(enumerate_clusters(arena, 3))
    assert [c.coefficient for c in clusters] == [Fraction(1), Fraction(-1, 2)]


def test_compatible_polymers_never_share_a_cluster(c4):
    a = DisPolymer(vertices=(0, 1), edge_ids=(c4.edge_index[(0, 1)],))
    b = DisPolymer(vertices=(2, 3), edge_ids=(c4.edge_index[(2, 3)],))
    arena = PolymerArena([a, b], graph=c4)
    clusters = list(enumerate_clusters(arena, 4))
    assert clusters
    assert all(len(set(c.polymer_ids)) == 1 for c in clusters)
    assert len(clusters) == 6


def test_xi_brute_matches_exact_partition_function(c4):
    q, beta = 3.0, 0.9
    arena = polymer_arena(c4, "dis", 4)
    expected = z_rc_exact(c4, q, beta).log_z - c4.n * math.log(q)
    assert xi_brute(arena, q, beta) == pytest.approx(expected, abs=1e-12)


def test_truncated_series_converges_to_brute_force(c4):
    q, beta = 100.0, 1.0
    arena = polymer_arena(c4, "dis", 4)
    series = truncated_log_xi(arena, q, beta, m=7, model="dis")
    assert series.value == pytest.approx(xi_brute(arena, q, beta), abs=1e-5)
    assert series.n_clusters > 0


def test_series_matches_direct_sum(c4):
    arena = polymer_arena(c4, "dis", 3)
    series = cluster_series(arena, 4)
    for q, beta in [(10.0, 0.5), (50.0, 2.0)]:
        direct = cluster_sum(arena, arena.log_weights(q, beta), 4)
        assert series.evaluate(q, beta) == pytest.approx(direct, rel=1e-12, abs=1e-15)


def test_pinned_series_site_weighting_sums_to_total(c4):
    arena = polymer_arena(c4, "dis", 2)
    total = cluster_series(arena, 3).evaluate(20.0, 1.0)
    per_site = sum(cluster_series(arena, 3, root=v, weighting="site").evaluate(20.0, 1.0) for v in range(c4.n))
    assert per_site == pytest.approx(total, rel=1e-12)


def test_series_parallel_matches_serial(c4):
    arena = polymer_arena(c4, "dis", 3)
    serial = cluster_series(arena, 4, n_jobs=1)
    parallel = cluster_series(arena, 4, n_jobs=2)
    assert parallel.terms == serial.terms
    assert parallel.n_clusters == serial.n_clusters


def test_series_rejects_unknown_weighting(c4):
    with pytest.raises(ValueError):
        cluster_series(polymer_arena(c4, "dis", 1), 2, weighting="uniform")


def test_cluster_budget(c4):
    arena = polymer_arena(c4, "dis", 2)
    with pytest.raises(BudgetExceededError):
        list(enumerate_clusters(arena, 4, budget=3))
    with pytest.raises(BudgetExceededError):
        cluster_series(arena, 4, budget=3)


def test_tail_bound():
    assert tail_bound(10, 1e6, 5, 4) == pytest.approx(10 * 1e6 ** (-4 / 1000))


def test_xi_brute_cap(k4):
    arena = polymer_arena(k4, "dis", 3)
    with pytest.raises(CapExceededError):
        xi_brute(arena, 2.0, 1.0)


def _single_edge_kp(q, beta, delta):
    r = default_kp_rate(q, delta, "dis")
    return 3 * math.exp(1 + r) * math.expm1(beta) / q


def test_kp_holds_for_large_q(k4):
    q = 1e6
    beta = math.log1p(q ** (1.9 / 3))
    report = kp_check(k4, q, beta, "dis", m=1)
    assert report.holds_up_to_m
    assert report.worst_ratio == pytest.approx(_single_edge_kp(q, beta, 3))
    assert report.worst_polymer_ratio == pytest.approx(5 / 3 * _single_edge_kp(q, beta, 3))
    assert report.partial


def test_kp_fails_for_small_q(k4):
    q = 2.0
    beta = math.log1p(q ** (2.1 / 3))
    report = kp_check(k4, q, beta, "dis", m=1)
    assert not report.holds_up_to_m
    assert report.worst_ratio > 5


def test_kp_at_beta_zero_is_trivial(k4):
    report = kp_check(k4, 100.0, 0.0, "dis", m=2)
    assert report.holds_up_to_m
    assert report.worst_ratio == 0.0
