import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meshopt.graph import (
    GeometricGraphSpec,
    Graph,
    GraphError,
    TopologySequence,
    complete_graph,
    cycle_graph,
    generate_geometric,
    is_b_connected,
    is_connected,
    is_strongly_connected,
    is_weakly_connected,
    path_graph,
    read_edgelist,
    sample_topology,
    write_edgelist,
)


def test_rejects_self_loops_and_out_of_range():
    with pytest.raises(GraphError):
        Graph(3, [(1, 1)])
    with pytest.raises(GraphError):
        Graph(3, [(0, 3)])
    with pytest.raises(GraphError):
        Graph(0, [])


def test_undirected_neighbors_are_symmetric():
    g = Graph(4, [(0, 1), (2, 1), (3, 0)])
    for i in range(4):
        for j in g.neighbors(i):
            assert i in g.neighbors(j)
    assert g.neighbors(1) == (0, 2)  # ascending order
    assert g.degree(1) == 2


def test_directed_in_out_neighbors():
    g = Graph(3, [(0, 1), (1, 2), (2, 0)], directed=True)
    assert g.in_neighbors(1) == (0,)
    assert g.out_neighbors(1) == (2,)
    assert g.has_edge(0, 1) and not g.has_edge(1, 0)
    with pytest.raises(GraphError):
        g.neighbors(0)


def test_is_connected_basics():
    assert is_connected(path_graph(3))
    assert not is_connected(Graph(4, [(0, 1), (2, 3)]))
    assert is_connected(Graph(1, []))
    with pytest.raises(GraphError):
        is_connected(Graph(2, [(0, 1)], directed=True))


def test_strong_and_weak_connectivity():
    cycle = Graph(3, [(0, 1), (1, 2), (2, 0)], directed=True)
    assert is_strongly_connected(cycle)
    chain = Graph(3, [(0, 1), (1, 2)], directed=True)
    assert not is_strongly_connected(chain)
    assert is_weakly_connected(chain)
    loose = Graph(3, [(0, 1)], directed=True)
    assert not is_weakly_connected(loose)
    with pytest.raises(GraphError):
        is_strongly_connected(path_graph(3))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 7), st.data())
def test_strongly_connected_implies_weakly_connected(n, data):
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    edges = data.draw(st.lists(st.sampled_from(pairs), max_size=len(pairs)))
    g = Graph(n, edges, directed=True)
    if is_strongly_connected(g):
        assert is_weakly_connected(g)


def test_sample_static_and_degenerate_probabilities():
    base = path_graph(3)
    static = TopologySequence(base)
    assert sample_topology(static, 0) == base
    assert sample_topology(static, 99) == base
    p0 = TopologySequence(base, model="undirected-drop", p=0.0, seed=5)
    assert sample_topology(p0, 7) == base
    p1 = TopologySequence(base, model="undirected-drop", p=1.0, seed=5)
    assert sample_topology(p1, 7).n_edges == 0


def test_sampling_is_referentially_transparent():
    seq = TopologySequence(complete_graph(6), model="undirected-drop", p=0.4, seed=11)
    for k in (0, 3, 17):
        assert sample_topology(seq, k) == sample_topology(seq, k)
    # different iterations see different draws (overwhelmingly likely)
    assert any(sample_topology(seq, k) != sample_topology(seq, k + 1)
               for k in range(10))


def test_directed_drop_produces_one_way_edges():
    seq = TopologySequence(Graph(2, [(0, 1)]), model="directed-drop", p=0.3, seed=1)
    n = 10_000
    oneway = sum(sample_topology(seq, k).n_edges == 1 for k in range(n))
    p2 = 2 * 0.3 * 0.7
    sigma = (p2 * (1 - p2) / n) ** 0.5
    assert abs(oneway / n - p2) <= 3 * sigma
    # snapshots are typed directed even when symmetric
    assert sample_topology(seq, 0).directed


def test_drop_models_require_undirected_base():
    directed = Graph(2, [(0, 1)], directed=True)
    with pytest.raises(GraphError):
        TopologySequence(directed, model="undirected-drop", p=0.1)


def test_b_connected_static_base():
    seq = TopologySequence(path_graph(3), model="undirected-drop", p=0.0)
    assert is_b_connected(seq, 0, 1)


def test_union_of_disconnected_snapshots_can_connect():
    # the window matters: single edges {0-1} and {1-2} are each disconnected
    # on 3 nodes but their union is a path
    g_even = Graph(3, [(0, 1)])
    g_odd = Graph(3, [(1, 2)])
    union = Graph(3, set(g_even.edges) | set(g_odd.edges))
    assert not is_connected(g_even)
    assert not is_connected(g_odd)
    assert is_connected(union)


def test_b_connected_with_heavy_drops():
    seq = TopologySequence(cycle_graph(5), model="undirected-drop", p=0.7, seed=3)
    # some single snapshot is disconnected but a window of many unions is not
    singles = [is_b_connected(seq, k, 1) for k in range(10)]
    assert not all(singles)
    assert is_b_connected(seq, 0, 50)


def test_geometric_graph_extremes_and_determinism():
    spec = GeometricGraphSpec(5, radius=float(np.sqrt(2.0)), seed=1)
    assert generate_geometric(spec) == complete_graph(5)
    tiny = GeometricGraphSpec(5, radius=1e-9, seed=1)
    assert generate_geometric(tiny).n_edges == 0
    a = generate_geometric(GeometricGraphSpec(12, 0.4, seed=9))
    b = generate_geometric(GeometricGraphSpec(12, 0.4, seed=9))
    assert a == b


def test_geometric_radius_calibration():
    # recorded calibration: radius 0.45 keeps >= 90% of N=20 samples connected
    ok = sum(is_connected(generate_geometric(GeometricGraphSpec(20, 0.45, seed=s)))
             for s in range(50))
    assert ok >= 45


def test_edgelist_round_trip(tmp_path):
    g = Graph(5, [(0, 1), (1, 3), (2, 4)], directed=True)
    path = tmp_path / "g.edges"
    write_edgelist(g, path)
    assert read_edgelist(path) == g
    u = cycle_graph(4)
    write_edgelist(u, path)
    assert read_edgelist(path) == u
