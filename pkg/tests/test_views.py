import math

import numpy as np
import pytest
import scipy.sparse as sp

from cascadeim.diffusion import DiffusionParams
from cascadeim.graph import Graph, assign_indegree_weights
from cascadeim.views import (
    DisconnectedTerminalsError,
    ViewConfig,
    compute_view_metrics,
    default_k,
    edge_costs,
    entropy_table,
    gramian,
    gramian_matrix,
    make_view_cgv,
    make_view_sbv,
    path_inverse_entropy,
    sample_propagation_graph,
    select_terminals,
    steiner_backbone_kmb,
    steiner_forest,
    transition_matrix,
)

from oracles import dense_gramian_rowsums, steiner_optimum


def diamond():
    # 0 -> 1 -> 3 and 0 -> 2 -> 3, every arc 0.5
    return Graph.from_edges(4, [(0, 1), (0, 2), (1, 3), (2, 3)], [0.5] * 4)


def full_sample(g):
    p = DiffusionParams(gamma=0.0, apply_sigmoid=False)
    s = sample_propagation_graph(g, p, rounds=4, rng_seed=0)
    return s.__class__(graph=g, live=np.ones_like(s.live), rounds=s.rounds)


def test_path_entropy_diamond():
    # two paths of probability .25 each: -2 * .25 * ln(.25)
    h = path_inverse_entropy(full_sample(diamond()), 0, 3, epsilon=0.0)
    assert h == pytest.approx(1.0 / (0.5 * math.log(4)))


def test_path_entropy_unreachable_is_zero():
    assert path_inverse_entropy(full_sample(diamond()), 3, 0) == 0.0
    with pytest.raises(ValueError):
        path_inverse_entropy(full_sample(diamond()), 1, 1)


def test_entropy_table_and_terminals():
    s = full_sample(diamond())
    t = entropy_table(s, [0, 1])
    d = t.as_dict()
    assert set(d) == {(0, 1), (0, 2), (0, 3), (1, 3)}
    assert t.get(2, 0) == 0.0
    terms = select_terminals(t, 4, 2)
    assert terms.tolist() == sorted(terms.tolist()) and len(terms) == 2


def test_propagation_sample_is_deterministic():
    g = assign_indegree_weights(Graph.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)],
                                                 directed=False))
    p = DiffusionParams(gamma=0.1)
    a = sample_propagation_graph(g, p, 50, 3).live
    b = sample_propagation_graph(g, p, 50, 3).live
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        sample_propagation_graph(g, p, 0)


def random_connected(rng, n, extra):
    edges = {(int(rng.integers(v)), v) for v in range(1, n)}
    target = min(n - 1 + extra, n * (n - 1) // 2)
    while len(edges) < target:
        a, b = sorted(int(x) for x in rng.integers(n, size=2))
        if a != b:
            edges.add((a, b))
    return Graph.from_edges(n, sorted(edges), directed=False)


def test_kmb_within_twice_optimum_small():
    rng = np.random.default_rng(0)
    for _ in range(25):
        n = int(rng.integers(5, 10))
        g = random_connected(rng, n, int(rng.integers(0, 8)))
        costs = {(int(a), int(b)): float(rng.uniform(0.1, 5.0))
                 for a, b in zip(g.src, g.dst) if a < b}
        terms = rng.choice(n, size=int(rng.integers(2, min(n, 5) + 1)), replace=False)
        bb = steiner_backbone_kmb(g, terms, costs)
        assert bb.cost <= 2 * steiner_optimum(n, costs, terms) + 1e-9
        # backbone is a tree spanning every terminal
        nodes = {v for e in bb.edges for v in e} | set(terms.tolist())
        assert len(bb.edges) == len(nodes) - 1
        assert set(terms.tolist()) <= nodes


def test_kmb_single_terminal_and_disconnected():
    g = Graph.from_edges(4, [(0, 1), (2, 3)], directed=False)
    costs = {(0, 1): 1.0, (2, 3): 1.0}
    assert len(steiner_backbone_kmb(g, [2], costs).edges) == 0
    with pytest.raises(DisconnectedTerminalsError):
        steiner_backbone_kmb(g, [0, 3], costs)
    forest = steiner_forest(g, [0, 1, 2, 3], costs)
    assert forest.edge_set() == {(0, 1), (2, 3)}


def test_edge_costs_prefer_table_entries():
    g = diamond()
    costs = edge_costs(g)
    single = 1.0 / (-0.5 * math.log(0.5) + 1e-6)
    assert costs[(0, 1)] == pytest.approx(1.0 / single)
    t = entropy_table(full_sample(g), [0])
    assert edge_costs(g, t)[(0, 1)] == pytest.approx(1.0 / t.get(0, 1))


def test_gramian_boundary_cases():
    P = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert gramian(P, 0).scores.tolist() == [1.0, 1.0]
    assert gramian(P, 1).scores.tolist() == [2.0, 1.0]
    with pytest.raises(ValueError):
        gramian(P, -1)


def test_gramian_matches_dense_and_grows_with_horizon():
    rng = np.random.default_rng(4)
    for _ in range(5):
        g = assign_indegree_weights(random_connected(rng, 20, 15))
        P = transition_matrix(g)
        prev = None
        for J in range(6):
            c = gramian(P, J).scores
            np.testing.assert_allclose(c, dense_gramian_rowsums(P.toarray(), J), rtol=0, atol=1e-9)
            np.testing.assert_allclose(c, gramian_matrix(P, J).sum(axis=1), atol=1e-9)
            if prev is not None:
                assert np.all(c >= prev - 1e-12)
            prev = c


def test_transition_matrix_rows():
    g = Graph.from_edges(3, [(0, 1), (0, 2)], [0.2, 0.6])
    P = transition_matrix(g).toarray()
    np.testing.assert_allclose(P[0], [0, 0.25, 0.75])
    assert not P[1].any()


def test_sbv_keeps_backbone_and_masks_all_rows():
    rng = np.random.default_rng(2)
    g = random_connected(rng, 30, 40).with_features(rng.random((30, 6)) + 1)
    costs = edge_costs(g)
    bb = steiner_backbone_kmb(g, [0, 7, 19], costs)
    v = make_view_sbv(g, bb, p_r=1.0, p_m=0.5, rng_seed=1)
    kept = {(min(a, b), max(a, b)) for a, b in v.adjacency}
    assert kept == bb.edge_set()
    assert np.all((v.graph.features == 0) == ~v.feature_mask[None, :])
    assert v.provenance == "SBV"
    untouched = make_view_sbv(g, bb, 0.0, 0.0)
    assert untouched.graph.edge_count == g.edge_count


def test_cgv_on_out_star_keeps_hub_edges():
    # out-star: only the hub has out-going arcs, so it has the top Gramian score
    g = assign_indegree_weights(Graph.from_edges(11, [(0, v) for v in range(1, 11)]))
    g = g.with_features(np.ones((11, 4)))
    sc = gramian(transition_matrix(g), 4)
    v = make_view_cgv(g, sc, 1, p_r=1.0, p_m=1.0, rng_seed=0)
    assert v.graph.edge_count == 10
    assert np.all(v.graph.features[0] == 1) and not v.graph.features[1:].any()
    assert v.masked_rows.tolist() == list(range(1, 11))


def test_view_rates_are_validated():
    g = diamond()
    with pytest.raises(ValueError):
        make_view_cgv(g, gramian(transition_matrix(g)), 1, p_r=1.5, p_m=0.0)
    with pytest.raises(ValueError):
        make_view_cgv(g, gramian(transition_matrix(g)), 0, p_r=0.5, p_m=0.0)


def test_compute_view_metrics_end_to_end():
    rng = np.random.default_rng(9)
    g = assign_indegree_weights(random_connected(rng, 60, 80))
    m = compute_view_metrics(g, DiffusionParams(gamma=0.1), ViewConfig(rounds=20))
    assert m.k == default_k(60) == 4
    assert len(m.terminals) == 4
    assert set(m.terminals.tolist()) <= {v for e in m.backbone.edges for v in e}
    assert sp.issparse(transition_matrix(g))
