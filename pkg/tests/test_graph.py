import json

import numpy as np
import pytest

from src.rcpolymer.graph import (
    EdgeConfig,
    Graph,
    GraphFormatError,
    Verdict,
    ball,
    class_check,
    components,
    count_cycles,
    enumerate_cycles,
    expansion_profile_exact,
    expected_cycle_count,
    graph_from_dict,
    graph_to_json,
    load_graph,
    load_named_graph,
    min_small_set_ratio,
    random_regular,
    second_eigenvalue,
    write_graph,
)
from src.rcpolymer.utils import BudgetExceededError, CapExceededError


def two_k4():
    edges = [(a + s, b + s) for s in (0, 4) for a in range(4) for b in range(a + 1, 4)]
    return Graph(8, edges, delta=3)


def test_graph_rejects_loops_and_parallel_edges():
    with pytest.raises(ValueError):
        Graph(3, [(0, 0)])
    with pytest.raises(ValueError):
        Graph(3, [(0, 1), (1, 0)])
    with pytest.raises(ValueError):
        Graph(3, [(0, 3)])


def test_edge_config_array_round_trip():
    present = np.array([True, False, True, True, False, False, False, False, True])
    a = EdgeConfig.from_array(present)
    assert a.count() == 4
    assert a.edge_ids() == [0, 2, 3, 8]
    assert np.array_equal(a.to_array(), present)
    assert EdgeConfig.from_hex(a.to_hex(), 9) == a
    assert 2 in a and 1 not in a
    assert a.without_edge(2).with_edge(2) == a


def test_edge_config_rejects_oversized_mask():
    with pytest.raises(ValueError):
        EdgeConfig(1 << 5, 5)


def test_components_empty_and_full(c4):
    _, c_empty = components(c4, EdgeConfig.empty(c4.n_edges))
    _, c_full = components(c4, EdgeConfig.full(c4.n_edges))
    assert (c_empty, c_full) == (4, 1)
    labels, c = components(c4, EdgeConfig.from_edge_ids([c4.edge_index[(0, 1)]], c4.n_edges))
    assert c == 3
    assert labels[0] == labels[1]


def test_graph_json_round_trip(tmp_path, petersen):
    path = tmp_path / "petersen.json"
    write_graph(petersen, str(path))
    again = load_graph(str(path))
    assert graph_to_json(again) == graph_to_json(petersen)
    assert path.read_text(encoding="utf-8").endswith("\n")


def test_graph_to_json_sorts_edges():
    g = Graph(3, [(2, 1), (0, 2), (1, 0)], delta=2)
    assert json.loads(graph_to_json(g))["edges"] == [[0, 1], [0, 2], [1, 2]]


@pytest.mark.parametrize(
    "payload",
    [
        {"n": 3, "delta": 2, "edges": [[0, 1], [1, 2]]},  # not regular
        {"n": -1, "delta": 2, "edges": []},
        {"n": 3, "delta": 2},
        {"n": 3, "delta": 2, "edges": [[0, 1], [0, 1], [1, 2]]},
    ],
)
def test_graph_from_dict_rejects_invalid(payload):
    with pytest.raises(GraphFormatError):
        graph_from_dict(payload)


def test_load_graph_malformed_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(GraphFormatError):
        load_graph(str(path))


def test_load_named_graph_unknown():
    with pytest.raises(KeyError):
        load_named_graph("no-such-graph")


@pytest.mark.parametrize("n, delta", [(10, 3), (12, 5), (20, 4)])
def test_random_regular_is_simple_and_regular(n, delta):
    g = random_regular(n, delta, seed=7)
    assert g.is_regular
    assert g.n_edges == n * delta // 2
    assert list(g.edges) == sorted(g.edges)
    assert graph_to_json(random_regular(n, delta, seed=7)) == graph_to_json(g)


def test_random_regular_rejects_bad_parameters():
    with pytest.raises(ValueError):
        random_regular(5, 3)
    with pytest.raises(ValueError):
        random_regular(4, 4)
    with pytest.raises(BudgetExceededError):
        random_regular(10, 3, seed=1, max_attempts=0)


def test_expansion_profile_exact_values(k6, c4):
    assert expansion_profile_exact(k6, 0.5).ratio == pytest.approx(0.6)
    assert expansion_profile_exact(c4, 0.5).ratio == pytest.approx(0.5)
    with pytest.raises(ValueError):
        expansion_profile_exact(c4, 0.1)
    with pytest.raises(CapExceededError):
        expansion_profile_exact(c4, 0.5, cap=3)


def test_min_small_set_ratio_petersen(petersen):
    profile = min_small_set_ratio(petersen, 2)
    assert profile.ratio == pytest.approx(4 / 6)
    assert len(profile.witness) == 2


@pytest.mark.parametrize("name", ["k2", "c3", "c4", "k6", "petersen"])
def test_class_check_passes_fixtures(name):
    report = class_check(load_named_graph(name), 0.2)
    assert report.verdict == Verdict.PASS
    assert report.method == "exact"


def test_class_check_fails_disconnected_graph():
    report = class_check(two_k4(), 0.2)
    assert report.verdict == Verdict.FAIL
    assert report.phi_half == 0.0
    assert len(report.witness) == 4


def test_class_check_beyond_exact_cap(petersen):
    report = class_check(petersen, 0.2, exact_cap=4)
    assert report.verdict == Verdict.PASS
    assert report.method == "small-set+spectral"
    assert report.lambda2 == pytest.approx(1.0)
    assert report.spectral_half == pytest.approx(1 / 3)
    assert class_check(two_k4(), 0.2, exact_cap=4).method == "components"


def test_class_check_small_set_witness(petersen):
    # Two adjacent vertices: boundary 4 over 3 * 2.
    report = class_check(petersen, 0.2, t_small=0.7, exact_cap=4)
    assert report.verdict == Verdict.FAIL
    assert report.method == "small-set"
    assert report.phi_small == pytest.approx(2 / 3)
    assert report.phi_half is None
    strict_half = class_check(petersen, 0.2, t_half=0.8, t_small=0.5, exact_cap=4)
    assert strict_half.verdict == Verdict.FAIL
    assert strict_half.phi_half == pytest.approx(2 / 3)


def test_second_eigenvalue(k4, petersen):
    assert second_eigenvalue(k4) == pytest.approx(-1.0)
    assert second_eigenvalue(petersen) == pytest.approx(1.0)


def test_cycle_counts(k4, petersen):
    assert count_cycles(k4, 4) == {3: 4, 4: 3}
    assert count_cycles(petersen, 6) == {3: 0, 4: 0, 5: 12, 6: 10}
    cycles = list(enumerate_cycles(k4, 3))
    assert all(c[0] == min(c) and c[1] < c[-1] for c in cycles)
    with pytest.raises(CapExceededError):
        list(enumerate_cycles(k4, 13))


def test_expected_cycle_count():
    assert expected_cycle_count(3, 3) == pytest.approx(8 / 6)
    assert expected_cycle_count(5, 4) == pytest.approx(256 / 8)


def test_ball(petersen):
    star = ball(petersen, 0, 1)
    assert star.is_tree
    assert star.vertices == [0, 1, 4, 5]
    whole = ball(petersen, 0, 2)
    assert len(whole.vertices) == 10
    assert not whole.is_tree
    assert len(whole.cycles) == 12
