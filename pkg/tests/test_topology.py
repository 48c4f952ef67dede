from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airgnn import topology as tp
from oracles import brute_force_slots, chromatic_number, conflict_pairs, random_digraph


def test_threshold_is_inclusive():
    # p * E|h|^2 / sigma2 = 1 * 10 / 1 sits exactly on gamma_min = 10
    p = np.array([[1.0], [1.0]])
    g = np.zeros((2, 2, 1))
    g[0, 1, 0] = 10.0
    g[1, 0, 0] = 9.99
    graphs = tp.build_edge_sets(p, g, sigma2=1.0, gamma_min=10.0)
    assert graphs.adjacency[0, 0, 1]
    assert not graphs.adjacency[0, 1, 0]


def test_zero_power_means_no_edges():
    g = np.full((3, 3, 2), 1.0)
    graphs = tp.build_edge_sets(np.zeros((3, 2)), g, 1e-12, 10.0)
    assert not graphs.adjacency.any()


def test_edge_set_errors():
    with pytest.raises(ValueError):
        tp.build_edge_sets(-np.ones((2, 1)), np.ones((2, 2, 1)), 1.0, 1.0)
    with pytest.raises(ValueError):
        tp.build_edge_sets(np.ones((2, 2)), np.ones((2, 2, 3)), 1.0, 1.0)


def test_self_loops_rejected():
    with pytest.raises(ValueError):
        tp.SubcarrierGraphs(np.eye(3, dtype=bool))


def test_per_subcarrier_power_changes_edges():
    g = np.full((3, 3, 2), 1e-8)
    p = np.array([[1e-3, 0.0], [1e-3, 0.0], [0.0, 1e-3]])
    graphs = tp.build_edge_sets(p, g, 1e-12, 10.0)
    assert graphs.adjacency[0, 0].sum() == 2 and not graphs.adjacency[1, 0].any()
    assert graphs.adjacency[1, 2].sum() == 2 and not graphs.adjacency[0, 2].any()


def test_star_conflict_graph_is_clique():
    adj = np.zeros((5, 5), bool)
    adj[1:, 0] = True
    cg = tp.build_conflict_graph(adj)
    assert cg.edges == frozenset((a, b) for a in range(1, 5) for b in range(a + 1, 5))
    assert tp.max_degree(adj[None]) == 4
    res = tp.exact_coloring(cg)
    assert res.num_colors == 4 and res.is_proper(cg)


def test_edgeless_graph():
    cg = tp.build_conflict_graph(np.zeros((4, 4), bool))
    assert not cg.edges
    assert tp.max_degree(np.zeros((1, 4, 4), bool)) == 0
    assert tp.digital_latency(0, 4) == 0


@pytest.mark.parametrize("delta,K,want", [(5, 2, 3), (4, 4, 1), (1, 16, 1), (17, 16, 2)])
def test_digital_latency(delta, K, want):
    assert tp.digital_latency(delta, K) == want


def test_latency_errors_and_air():
    with pytest.raises(ValueError):
        tp.digital_latency(3, 0)
    assert tp.air_latency() == 1
    assert tp.air_latency(np.ones((3, 3))) == 1


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 9), st.floats(0.1, 0.7), st.integers(0, 10_000))
def test_coloring_against_brute_force(n, p, seed):
    adj = random_digraph(n, p, np.random.default_rng(seed))
    cg = tp.build_conflict_graph(adj)
    assert set(cg.edges) == conflict_pairs(adj)
    exact = tp.exact_coloring(cg)
    greedy = tp.greedy_coloring(cg)
    degen = tp.greedy_coloring(cg, "degeneracy")
    chi = chromatic_number(n, conflict_pairs(adj))
    assert exact.is_proper(cg) and greedy.is_proper(cg) and degen.is_proper(cg)
    assert exact.num_colors == chi
    assert greedy.num_colors >= chi and degen.num_colors >= chi
    # the largest receiver neighbourhood is a clique of the conflict graph
    assert chi >= tp.max_degree(adj[None])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.floats(0.1, 0.6), st.sampled_from([1, 2, 3, 4, 8]), st.integers(0, 10_000))
def test_slots_match_brute_force(n, p, K, seed):
    adj = random_digraph(n, p, np.random.default_rng(seed))
    if not adj.any():
        return
    rho = tp.exact_coloring(tp.build_conflict_graph(adj)).num_colors
    assert brute_force_slots(adj, K) == tp.digital_latency(rho, K)
    assert math.ceil(rho / K) >= tp.digital_latency(tp.max_degree(adj[None]), K)


def test_greedy_tie_break_by_id():
    # two isolated conflict edges: ids decide the order
    adj = np.zeros((4, 4), bool)
    adj[0, 2] = adj[1, 2] = True
    res = tp.greedy_coloring(tp.build_conflict_graph(adj))
    assert res.color_of[0] == 0 and res.color_of[1] == 1


def test_unknown_order():
    with pytest.raises(ValueError):
        tp.greedy_coloring(tp.build_conflict_graph(np.zeros((2, 2), bool)), "random")


def test_edge_list_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    adj = rng.random((3, 5, 5)) < 0.3
    adj[:, np.arange(5), np.arange(5)] = False
    g = tp.SubcarrierGraphs(adj)
    path = tp.write_edge_list(g, tmp_path / "edges.txt")
    back = tp.read_edge_list(path)
    np.testing.assert_array_equal(back.adjacency, adj)


def test_coloring_csv(tmp_path):
    adj = np.zeros((3, 3), bool)
    adj[0, 2] = adj[1, 2] = True
    res = tp.exact_coloring(tp.build_conflict_graph(adj))
    text = tp.write_coloring_csv(res, tmp_path / "c.csv").read_text().splitlines()
    assert text[0] == "node,color" and len(text) == 4


def test_max_degree_per_subcarrier():
    adj = np.zeros((2, 4, 4), bool)
    adj[0, [1, 2], 0] = True
    adj[1, [3], 0] = True
    assert tp.max_degree(adj) == 3
    assert tp.max_degree(adj, union=False) == 2
