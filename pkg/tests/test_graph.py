import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cascadeim.graph import (
    DegradationSpec,
    Graph,
    GraphFormatError,
    assign_indegree_weights,
    common_neighbor_ratio,
    degrade,
    graph_fingerprint,
    load_edge_list,
    load_features,
    save_edge_list,
    structural_features,
)
from cascadeim.validation import check_budget, check_node_set, top_k_indices

from oracles import common_neighbor_ratio_bruteforce


def random_pairs(rng, n, m):
    pairs = set()
    while len(pairs) < m:
        a, b = rng.integers(n, size=2)
        if a != b:
            pairs.add((int(min(a, b)), int(max(a, b))))
    return sorted(pairs)


def test_from_edges_sorts_and_dedups():
    with pytest.warns(UserWarning, match="deduplicated"):
        g = Graph.from_edges(4, [(2, 1), (0, 3), (2, 1), (0, 1)], [0.1, 0.2, 0.9, 0.3])
    assert g.src.tolist() == [0, 0, 2]
    assert g.dst.tolist() == [1, 3, 1]
    assert g.weight.tolist() == [0.3, 0.2, 0.1]


def test_self_loops_dropped_with_warning():
    with pytest.warns(UserWarning, match="self-loop"):
        g = Graph.from_edges(3, [(0, 0), (0, 1)])
    assert g.edge_count == 1


def test_undirected_stores_both_arcs():
    g = Graph.from_edges(3, [(0, 1), (1, 2)], directed=False)
    assert g.edge_count == 4
    assert g.has_edge(1, 0) and g.has_edge(2, 1)


@pytest.mark.parametrize("kwargs", [
    dict(src=[0], dst=[5], weight=[0.5]),
    dict(src=[1], dst=[1], weight=[0.5]),
    dict(src=[0], dst=[1], weight=[1.5]),
    dict(src=[1, 0], dst=[0, 1], weight=[0.5, 0.5]),
])
def test_constructor_rejects_bad_arrays(kwargs):
    with pytest.raises(ValueError):
        Graph(3, **kwargs)


def test_arrays_are_read_only():
    g = Graph.from_edges(2, [(0, 1)])
    with pytest.raises(ValueError):
        g.weight[0] = 0.1


def test_indegree_weights():
    g = assign_indegree_weights(Graph.from_edges(4, [(0, 2), (1, 2), (3, 2), (2, 0)]))
    for s, d, w in zip(g.src, g.dst, g.weight):
        assert w == 1.0 / g.in_degree[d]


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 25), st.integers(0, 2**31), st.floats(0.05, 0.6))
def test_common_neighbor_ratio_matches_set_oracle(n, seed, density):
    rng = np.random.default_rng(seed)
    m = max(1, int(density * n * (n - 1) / 2))
    pairs = random_pairs(rng, n, m)
    g = Graph.from_edges(n, pairs, directed=False)
    assert common_neighbor_ratio(g) == pytest.approx(
        common_neighbor_ratio_bruteforce(n, pairs), abs=1e-12)


def test_common_neighbor_ratio_triangle_and_path():
    tri = Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)], directed=False)
    # each neighbour shares exactly one of my two neighbours
    assert common_neighbor_ratio(tri) == pytest.approx(0.5)
    path = Graph.from_edges(3, [(0, 1), (1, 2)], directed=False)
    assert common_neighbor_ratio(path) == 0.0


def test_degrade_rates_and_pairing():
    rng = np.random.default_rng(1)
    g = Graph.from_edges(400, random_pairs(rng, 400, 3000), directed=False,
                         features=rng.random((400, 10)) + 1)
    d = degrade(g, DegradationSpec(0.5, 0.5, rng_seed=7))
    assert abs(d.edge_count / g.edge_count - 0.5) < 0.05
    assert abs((d.features == 0).mean() - 0.5) < 0.05
    # undirected pairs survive or vanish together
    arcs = set(zip(d.src.tolist(), d.dst.tolist()))
    assert all((b, a) in arcs for a, b in arcs)
    assert graph_fingerprint(d) == graph_fingerprint(degrade(g, DegradationSpec(0.5, 0.5, 7)))


def test_degrade_extremes():
    g = Graph.from_edges(3, [(0, 1), (1, 2)], features=np.ones((3, 2)))
    assert degrade(g, DegradationSpec(0.0, 0.0)).edge_count == 2
    gone = degrade(g, DegradationSpec(1.0, 1.0))
    assert gone.edge_count == 0 and not gone.features.any()
    with pytest.raises(ValueError):
        DegradationSpec(edge_drop_rate=1.2)


def test_edge_list_roundtrip_with_labels(tmp_path):
    p = tmp_path / "g.txt"
    p.write_text("# comment\nalice bob 0.5\nbob carol\n\ncarol alice 0.25\n")
    g = load_edge_list(p)
    assert g.labels == ("alice", "bob", "carol")
    out = tmp_path / "out.txt"
    save_edge_list(g, out)
    h = load_edge_list(out)
    assert graph_fingerprint(g) == graph_fingerprint(h) and h.labels == g.labels


def test_numeric_labels_keep_numeric_order(tmp_path):
    p = tmp_path / "g.csv"
    p.write_text("10,2\n2,7\n")
    g = load_edge_list(p, "csv")
    assert g.labels == ("2", "7", "10")
    assert g.node_of("10") == 2


@pytest.mark.parametrize("body", ["1\n", "1 2 x\n", "1 2 3 4\n"])
def test_malformed_edge_lines(tmp_path, body):
    p = tmp_path / "bad.txt"
    p.write_text(body)
    with pytest.raises(GraphFormatError):
        load_edge_list(p)


def test_weight_out_of_range(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("1 2 1.5\n")
    with pytest.raises(ValueError):
        load_edge_list(p)


def test_features_row_count(tmp_path):
    p = tmp_path / "f.txt"
    p.write_text("1 2\n3 4\n")
    assert load_features(p, 2).shape == (2, 2)
    with pytest.raises(GraphFormatError):
        load_features(p, 3)


def test_structural_features_columns():
    g = assign_indegree_weights(Graph.from_edges(4, [(0, 1), (1, 2), (0, 2), (2, 3)],
                                                 directed=False))
    x = structural_features(g)
    assert x.shape == (4, 5)
    assert np.all(x[:, 0] == 1)
    assert x[3, 4] == 0.0 and x[0, 4] == 1.0


def test_validation_helpers():
    assert check_node_set([3, 1, 3], 5).tolist() == [1, 3]
    with pytest.raises(ValueError):
        check_node_set([7], 5)
    with pytest.raises(ValueError):
        check_budget(6, 5)
    assert top_k_indices([1.0, 3.0, 3.0, 0.0], 2).tolist() == [1, 2]
