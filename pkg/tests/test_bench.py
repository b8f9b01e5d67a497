import csv
import io
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from cascadeim.bench import (
    CSV_COLUMNS,
    ConfigError,
    PipelineConfig,
    ResultTable,
    RunConfig,
    baseline_degree,
    baseline_pagerank,
    baseline_random,
    evaluate,
    export_cascade,
    export_plot,
    export_table,
    hamster_scale_graph,
    model_features,
    pagerank_scores,
    series_from_table,
    star_graph,
    two_star_graph,
)
from cascadeim.diffusion import DiffusionParams, simulate_cascade
from cascadeim.graph import DegradationSpec, Graph, structural_features
from cascadeim.views import ViewConfig

from oracles import dense_pagerank


def random_digraph(seed, n=15, m=40):
    rng = np.random.default_rng(seed)
    arcs = set()
    while len(arcs) < m:
        a, b = (int(x) for x in rng.integers(n, size=2))
        if a != b:
            arcs.add((a, b))
    return Graph.from_edges(n, sorted(arcs))


@pytest.mark.parametrize("seed", range(5))
def test_pagerank_matches_eigenvector(seed):
    g = random_digraph(seed)
    ref = dense_pagerank(g.node_count, list(zip(g.src.tolist(), g.dst.tolist())))
    np.testing.assert_allclose(pagerank_scores(g, tol=1e-14, iters=1000), ref, atol=1e-10)


def test_pagerank_validation_and_ranking():
    with pytest.raises(ValueError):
        pagerank_scores(star_graph(3), damping=1.0)
    assert baseline_pagerank(star_graph(6), 1) == [0]


def test_baselines_prefix_and_uniqueness():
    g = random_digraph(1, 30, 90)
    r10 = baseline_random(g, 10, rng_seed=4)
    assert len(set(r10)) == 10 and baseline_random(g, 5, rng_seed=4) == r10[:5]
    d = baseline_degree(g, 5)
    assert sorted(g.out_degree[d], reverse=True) == sorted(g.out_degree, reverse=True)[:5]
    with pytest.raises(ValueError):
        baseline_degree(g, 31)


def test_synthetic_graphs():
    s = two_star_graph(4)
    assert s.node_count == 10 and s.out_degree[0] == s.out_degree[1] == 4
    h = hamster_scale_graph()
    assert h.node_count == 921 and h.feature_dim == 5 and not h.directed


def test_model_features_appends_structure():
    g = star_graph(4)
    np.testing.assert_array_equal(model_features(g).features, structural_features(g))
    informative = g.with_features(np.arange(5.0))
    x = model_features(informative).features
    assert x.shape == (5, 5)
    np.testing.assert_array_equal(x[:, 0], np.arange(5.0))
    # log(1 + in-degree) of the hub
    assert x[0, 1] == pytest.approx(np.log(5))


def test_run_config_validation():
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig(methods=("greedy",))
    with pytest.raises(ConfigError):
        RunConfig(budgets=(0,))
    with pytest.raises(ConfigError):
        RunConfig(seeds=())


def tiny_run(**kw):
    base = dict(dataset="toy", degradation=DegradationSpec(0.3, 0.3, 1),
                diffusion=DiffusionParams(gamma=0.1, apply_sigmoid=False),
                methods=("random", "degree", "pagerank"), budgets=(1, 3),
                eval_rollouts=50, seeds=(0, 1), record_time=False)
    base.update(kw)
    return RunConfig(**base)


def test_evaluate_rows_and_determinism():
    g = hamster_scale_graph(60, m=2, seed=2)
    t1 = evaluate(tiny_run(), g)
    t2 = evaluate(tiny_run(), g)
    assert export_table(t1) == export_table(t2)
    assert len(t1.rows) == 6
    assert t1.fingerprints[0] != t1.fingerprints[1]
    # per-seed mean and standard error across seeds
    vals = t1.per_seed("degree", 3)
    assert t1.spread("degree", 3) == pytest.approx(vals.mean())
    row = next(r for r in t1.rows if r["method"] == "degree" and r["budget"] == 3)
    assert row["std_error"] == pytest.approx(vals.std(ddof=1) / np.sqrt(2))
    assert row["wall_time_s"] == 0.0
    # smaller budgets are prefixes of the single max-budget selection
    assert len(t1.selections[("random", 0)]) == 3


def test_evaluate_learned_methods_smoke():
    g = hamster_scale_graph(40, m=2, seed=0)
    pipe = PipelineConfig(gcl_epochs=2, episodes=2, rollouts=4, batch_size=4, widths=(8, 8),
                          view=ViewConfig(rounds=5))
    t = evaluate(tiny_run(methods=("sp-gnn", "sp-gcrl"), seeds=(0,), budgets=(2,),
                          pipeline=pipe), g)
    assert {r["method"] for r in t.rows} == {"sp-gnn", "sp-gcrl"}


def test_export_table_columns(tmp_path):
    table = ResultTable(rows=[{"dataset": "d", "method": "random", "budget": 1,
                               "mean_spread": np.float64(2.5), "std_error": 0.1,
                               "wall_time_s": 0.0}])
    text = export_table(table, tmp_path / "t.csv")
    rows = list(csv.reader(io.StringIO(text)))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert rows[1] == ["d", "random", "1", "2.5", "0.1", "0.0"]
    assert (tmp_path / "t.csv").read_text() == text


def test_export_plot_is_valid_svg():
    series = {"a": ([10, 20], [1.0, 2.0], [0.1, 0.2]), "b": ([10, 20], [0.5, 1.5], [0.0, 0.1])}
    svg = export_plot(series, title="spread & budget")
    root = ET.fromstring(svg)
    polys = root.findall("{http://www.w3.org/2000/svg}polygon")
    assert len(polys) == 2
    assert export_plot(series, title="spread & budget") == svg
    assert ET.fromstring(export_plot({}))


def test_series_from_table_order():
    t = ResultTable(rows=[{"method": "x", "budget": b, "mean_spread": float(b), "std_error": 0.0}
                          for b in (1, 2)])
    assert series_from_table(t) == {"x": ([1, 2], [1.0, 2.0], [0.0, 0.0])}


def test_export_cascade_colours():
    g = Graph.from_edges(3, [(0, 1), (1, 2)], labels=("a", 'b"q', "c"))
    tr = simulate_cascade(g, [0], DiffusionParams(apply_sigmoid=False, max_rounds=1))
    dot = export_cascade(g, tr, [0])
    assert '"a" [fillcolor=red];' in dot
    assert '"b\\"q" [fillcolor=blue];' in dot
    assert '"c" [fillcolor=grey];' in dot
    assert dot.startswith("digraph cascade {") and '"a" -> "b\\"q";' in dot
