"""Baselines, the end-to-end pipelines, the evaluation harness and exporters."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field, replace
from xml.sax.saxutils import escape

import networkx as nx
import numpy as np
import torch

from ._rng import child_seed
from .diffusion import DiffusionParams, estimate_spread
from .gcl import ContrastiveEncoder, MeanEncoder, encode
from .graph import (
    DegradationSpec,
    Graph,
    assign_indegree_weights,
    common_neighbor_ratio,
    degrade,
    graph_fingerprint,
    structural_features,
)
from .policy import DDQNSeedSelector
from .validation import check_budget, check_graph, top_k_indices
from .views import ViewConfig

logger = logging.getLogger(__name__)

METHODS = ("random", "degree", "pagerank", "sp-gnn", "sp-gcrl")
CSV_COLUMNS = ("dataset", "method", "budget", "mean_spread", "std_error", "wall_time_s")

__all__ = [
    "METHODS",
    "CSV_COLUMNS",
    "ConfigError",
    "baseline_random",
    "baseline_degree",
    "pagerank_scores",
    "baseline_pagerank",
    "ablation_embeddings",
    "ablation_spgnn",
    "spgcrl_embeddings",
    "PipelineConfig",
    "RunConfig",
    "ResultTable",
    "evaluate",
    "export_table",
    "export_plot",
    "export_cascade",
    "star_graph",
    "two_star_graph",
    "two_community_graph",
    "hamster_scale_graph",
]


class ConfigError(ValueError):
    pass


# -- baselines ---------------------------------------------------------------------

def baseline_random(g, budget, rng_seed=0):
    """Uniform sample without replacement; smaller budgets are prefixes."""
    check_budget(budget, g.node_count)
    perm = np.random.default_rng(rng_seed).permutation(g.node_count)
    return [int(v) for v in perm[:budget]]


def baseline_degree(g, budget):
    check_budget(budget, g.node_count)
    return [int(v) for v in top_k_indices(g.out_degree, budget)]


def pagerank_scores(g, damping=0.85, iters=200, tol=1e-10):
    """Power iteration on the unweighted directed graph, uniform teleport.

    Mass sitting on nodes without out-edges is spread uniformly each step.
    """
    if not 0.0 < damping < 1.0:
        raise ValueError("damping must lie in (0, 1)")
    n = g.node_count
    if n == 0:
        return np.zeros(0)
    out = g.out_degree.astype(np.float64)
    A = g.adjacency(weighted=False).tocsr()
    dangling = out == 0
    inv = np.divide(1.0, out, out=np.zeros(n), where=~dangling)
    r = np.full(n, 1.0 / n)
    for _ in range(iters):
        nxt = damping * (A.T @ (r * inv) + r[dangling].sum() / n) + (1 - damping) / n
        nxt /= nxt.sum()
        done = np.abs(nxt - r).sum() < tol
        r = nxt
        if done:
            break
    return r


def baseline_pagerank(g, budget, damping=0.85, iters=200):
    check_budget(budget, g.node_count)
    return [int(v) for v in top_k_indices(pagerank_scores(g, damping, iters), budget)]


# -- learned pipelines ---------------------------------------------------------------

def _has_informative_features(g):
    x = g.features
    return x.shape[1] > 1 or (len(x) > 0 and np.ptp(x[:, 0]) > 0)


def model_features(g):
    """Encoder input: node attributes plus structural descriptors of the observed graph.

    Mean aggregation cannot count neighbours, and masked attribute rows carry
    nothing, so degree and clustering are appended explicitly. A constant
    attribute column is replaced by the descriptors altogether.
    """
    s = structural_features(g)
    if not _has_informative_features(g):
        return g.with_features(s)
    return g.with_features(np.hstack([g.features, s[:, 1:]]))


@dataclass(frozen=True)
class PipelineConfig:
    """Hyper-parameters shared by the SP-GCRL pipeline and its SP-GNN ablation."""

    gcl_epochs: int = 100
    gcl_lr: float = 1e-3
    tau: float = 0.5
    widths: tuple = (64, 64)
    view: ViewConfig = field(default_factory=ViewConfig)
    episodes: int = 50
    rollouts: int = 256
    n_step: int = 3
    discount: float = 0.9
    hidden: int = 64
    batch_size: int = 64
    lr: float = 1e-3
    target_sync_every: int = 10
    candidate_limit: int | None = 100
    updates_per_step: int = 1
    eval_every: int | None = 10


def ablation_embeddings(g, config=None, rng_seed=0):
    """Forward pass of a randomly initialised mean-aggregation encoder (no training)."""
    config = config or PipelineConfig()
    g = model_features(g)
    enc = MeanEncoder(g.feature_dim, config.widths, seed=rng_seed)
    with torch.no_grad():
        return encode(g, enc).numpy()


def spgcrl_embeddings(g, p, config=None, rng_seed=0, metrics=None):
    """Contrastive embeddings trained on the backbone / controllability view pair."""
    config = config or PipelineConfig()
    g = model_features(g)
    enc = ContrastiveEncoder(epochs=config.gcl_epochs, lr=config.gcl_lr, tau=config.tau,
                             widths=config.widths, view_config=config.view,
                             diffusion_params=p, random_state=rng_seed)
    return enc.fit_transform(g, metrics=metrics)


def _policy(config, budget, p, rng_seed):
    return DDQNSeedSelector(budget=budget, episodes=config.episodes, hidden=config.hidden,
                            n_step=config.n_step, discount=config.discount,
                            target_sync_every=config.target_sync_every,
                            batch_size=config.batch_size, lr=config.lr,
                            rollouts=config.rollouts, updates_per_step=config.updates_per_step,
                            candidate_limit=config.candidate_limit,
                            eval_every=config.eval_every, diffusion_params=p,
                            random_state=rng_seed)


def policy_seeds(g, emb, budget, p, config=None, rng_seed=0):
    config = config or PipelineConfig()
    return _policy(config, budget, p, rng_seed).fit(emb, g).select(budget)


def ablation_spgnn(g, budget, p, config=None, rng_seed=0):
    """SP-GNN ablation: the same policy on untrained plain-encoder embeddings."""
    return policy_seeds(g, ablation_embeddings(g, config, rng_seed), budget, p, config, rng_seed)


def spgcrl(g, budget, p, config=None, rng_seed=0):
    return policy_seeds(g, spgcrl_embeddings(g, p, config, rng_seed), budget, p, config, rng_seed)


# -- evaluation ---------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    dataset: str = "graph"
    degradation: DegradationSpec = field(default_factory=DegradationSpec)
    diffusion: object = None     # DiffusionParams, callable(graph) -> params, or None
    methods: tuple = METHODS
    budgets: tuple = (10, 20, 30, 40, 50)
    eval_rollouts: int = 1000
    seeds: tuple = (0,)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    record_time: bool = True
    reweight: bool = True                        # 1/d_in weights on the degraded graph

    def __post_init__(self):
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown method(s) {unknown}; choose from {list(METHODS)}")
        if not self.budgets or any(b < 1 for b in self.budgets):
            raise ConfigError("budgets must be positive integers")
        if self.eval_rollouts < 1 or not self.seeds:
            raise ConfigError("eval_rollouts must be >= 1 and seeds non-empty")


@dataclass
class ResultTable:
    """Aggregated rows plus the per-seed cells they were built from."""

    rows: list = field(default_factory=list)
    cells: list = field(default_factory=list)         # (method, budget, seed, spread, se)
    fingerprints: dict = field(default_factory=dict)  # seed -> degraded-graph hash
    selections: dict = field(default_factory=dict)    # (method, seed) -> ordered seeds

    def spread(self, method, budget):
        for r in self.rows:
            if r["method"] == method and r["budget"] == budget:
                return r["mean_spread"]
        raise KeyError((method, budget))

    def per_seed(self, method, budget):
        return np.array([c[3] for c in self.cells if c[0] == method and c[1] == budget])


def prepare_graph(g, spec, reweight=True):
    d = degrade(g, spec)
    return assign_indegree_weights(d) if reweight else d


def _diffusion_for(spec, g):
    if spec is None:
        return DiffusionParams(gamma=common_neighbor_ratio(g))
    return spec(g) if callable(spec) else spec


def _select(method, g, budget, p, config, seed):
    if method == "random":
        return baseline_random(g, budget, seed)
    if method == "degree":
        return baseline_degree(g, budget)
    if method == "pagerank":
        return baseline_pagerank(g, budget)
    if method == "sp-gnn":
        return ablation_spgnn(g, budget, p, config, seed)
    if method == "sp-gcrl":
        return spgcrl(g, budget, p, config, seed)
    raise ConfigError(f"unknown method {method!r}")


def evaluate(config, graph):
    """Run every (method, budget, seed) cell and aggregate over seeds.

    For each seed the input graph is degraded once; every method then sees
    the same degraded graph and the same evaluation random numbers. Each
    method selects ``max(budgets)`` nodes once and smaller budgets use the
    prefix. ``wall_time_s`` is the mean over seeds of selection time plus
    evaluation time for that budget (0 when ``record_time`` is off).
    """
    check_graph(graph)
    bmax = max(config.budgets)
    table = ResultTable()
    timings = {}
    for seed in config.seeds:
        spec = replace(config.degradation, rng_seed=child_seed(config.degradation.rng_seed, seed))
        g = prepare_graph(graph, spec, config.reweight)
        check_budget(bmax, g.node_count)
        table.fingerprints[seed] = graph_fingerprint(g)
        p = _diffusion_for(config.diffusion, g)
        eval_key = child_seed(seed, 0xE7A1)
        for method in config.methods:
            # fairness: every method runs on the very same degraded graph
            assert graph_fingerprint(g) == table.fingerprints[seed]
            t0 = time.perf_counter()
            chosen = _select(method, g, bmax, p, config.pipeline, seed)
            t_sel = time.perf_counter() - t0
            table.selections[(method, seed)] = chosen
            for b in config.budgets:
                t1 = time.perf_counter()
                est = estimate_spread(g, chosen[:b], p, config.eval_rollouts, eval_key)
                t_eval = time.perf_counter() - t1
                table.cells.append((method, b, seed, est.mean, est.std_error))
                timings.setdefault((method, b), []).append(t_sel + t_eval)
            logger.info("seed %s %s done in %.1fs", seed, method, time.perf_counter() - t0)

    for method in config.methods:
        for b in config.budgets:
            vals = table.per_seed(method, b)
            if len(vals) > 1:
                se = float(vals.std(ddof=1) / np.sqrt(len(vals)))
            else:
                se = next(c[4] for c in table.cells if c[0] == method and c[1] == b)
            wall = float(np.mean(timings[(method, b)])) if config.record_time else 0.0
            table.rows.append({"dataset": config.dataset, "method": method, "budget": b,
                               "mean_spread": float(vals.mean()), "std_error": se,
                               "wall_time_s": wall})
    return table


# -- exporters ---------------------------------------------------------------------

def _fmt(x):
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def export_table(table, path=None):
    """CSV text with the fixed column order; also written to ``path`` if given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in table.rows:
        w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    text = buf.getvalue()
    if path is not None:
        _write(path, text)
    return text


def _write(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def series_from_table(table):
    """``{method: (budgets, means, std_errors)}`` in row order."""
    out = {}
    for r in table.rows:
        xs, ys, es = out.setdefault(r["method"], ([], [], []))
        xs.append(r["budget"])
        ys.append(r["mean_spread"])
        es.append(r["std_error"])
    return out


def export_plot(series, path=None, title="", width=640, height=400):
    """Self-contained SVG line chart with shaded +-1 std-error bands."""
    ml, mr, mt, mb = 60, 140, 30, 45
    pts = [(x, y - e, y + e) for xs, ys, es in series.values() for x, y, e in zip(xs, ys, es)]
    if pts:
        x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
        y0, y1 = min(0.0, min(p[1] for p in pts)), max(p[2] for p in pts)
    else:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1
    pw, ph = width - ml - mr, height - mt - mb

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="14">'
           f'{escape(title)}</text>',
           f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
           f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>']
    for t in np.linspace(y0, y1, 5):
        out.append(f'<text x="{ml - 6}" y="{sy(t) + 4:.1f}" text-anchor="end" '
                   f'font-size="10">{t:.4g}</text>')
    xticks = sorted({p[0] for p in pts})
    for t in xticks:
        out.append(f'<text x="{sx(t):.1f}" y="{mt + ph + 16}" text-anchor="middle" '
                   f'font-size="10">{t:g}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" '
               f'font-size="12">budget</text>')
    for i, (name, (xs, ys, es)) in enumerate(series.items()):
        c = _PALETTE[i % len(_PALETTE)]
        upper = [f"{sx(x):.2f},{sy(y + e):.2f}" for x, y, e in zip(xs, ys, es)]
        lower = [f"{sx(x):.2f},{sy(y - e):.2f}" for x, y, e in zip(xs, ys, es)]
        out.append(f'<polygon points="{" ".join(upper + lower[::-1])}" fill="{c}" '
                   f'fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        out.append(f'<polyline points="{line}" fill="none" stroke="{c}" stroke-width="2"/>')
        ly = mt + 14 + 18 * i
        out.append(f'<line x1="{ml + pw + 12}" y1="{ly}" x2="{ml + pw + 32}" y2="{ly}" '
                   f'stroke="{c}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 38}" y="{ly + 4}" font-size="11">{escape(str(name))}</text>')
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    if path is not None:
        _write(path, text)
    return text


def _dot_id(label):
    return '"' + str(label).replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_cascade(g, trace, seeds, path=None):
    """Graphviz DOT of a cascade: seeds red, influenced blue, unaffected grey."""
    seeds = set(int(s) for s in seeds)
    arrow = "->" if g.directed else "--"
    lines = [("digraph" if g.directed else "graph") + " cascade {",
             "  node [style=filled, fontcolor=white];"]
    for v in range(g.node_count):
        color = "red" if v in seeds else ("blue" if trace.active[v] else "grey")
        lines.append(f"  {_dot_id(g.label_of(v))} [fillcolor={color}];")
    keep = np.ones(g.edge_count, dtype=bool) if g.directed else g.src < g.dst
    for s, d in zip(g.src[keep], g.dst[keep]):
        lines.append(f"  {_dot_id(g.label_of(s))} {arrow} {_dot_id(g.label_of(d))};")
    lines.append("}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        _write(path, text)
    return text


# -- synthetic graphs ---------------------------------------------------------------

def star_graph(leaves=30, hub=0, directed=False):
    """Hub connected to ``leaves`` leaves; the hub gets id ``hub``."""
    n = leaves + 1
    others = [v for v in range(n) if v != hub]
    return assign_indegree_weights(Graph.from_edges(n, [(hub, v) for v in others],
                                                    directed=directed))


def two_star_graph(leaves=15, hubs=(0, 1), directed=False):
    """Two disjoint stars; the hubs get ids ``hubs``."""
    n = 2 * leaves + 2
    others = [v for v in range(n) if v not in hubs]
    edges = [(hubs[i // leaves], v) for i, v in enumerate(others)]
    return assign_indegree_weights(Graph.from_edges(n, edges, directed=directed))


def two_community_graph(n=50, p_in=0.3, p_out=0.02, seed=0):
    """Two equal planted communities; returns ``(graph, community labels)``."""
    sizes = [n // 2, n - n // 2]
    G = nx.stochastic_block_model(sizes, [[p_in, p_out], [p_out, p_in]], seed=seed)
    g = Graph.from_edges(n, list(G.edges()), directed=False)
    labels = np.repeat([0, 1], sizes)
    return assign_indegree_weights(g), labels


def hamster_scale_graph(n=921, m=4, p=0.3, seed=0):
    """Clustered power-law graph at the size of a small online friendship network."""
    G = nx.powerlaw_cluster_graph(n, m, p, seed=seed)
    g = assign_indegree_weights(Graph.from_edges(n, list(G.edges()), directed=False))
    return g.with_features(structural_features(g))
