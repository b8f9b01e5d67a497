"""Structure-aware graph augmentations.

Two complementary views of a graph are produced for contrastive learning:

* the Steiner-backbone view (SBV) keeps a low-cost tree connecting the nodes
  whose incoming propagation corridors have the most concentrated path
  distribution, and perturbs everything else;
* the controllability view (CGV) keeps the neighbourhood of the nodes with the
  highest finite-horizon controllability Gramian row sums.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from ._rng import counter_uniform
from .validation import check_node_set, check_probability, check_top_k, top_k_indices

__all__ = [
    "PropagationSample",
    "PathEntropyTable",
    "Backbone",
    "View",
    "GramianScores",
    "DisconnectedTerminalsError",
    "ViewConfig",
    "ViewMetrics",
    "first_exposure_probability",
    "sample_propagation_graph",
    "path_inverse_entropy",
    "entropy_table",
    "select_terminals",
    "edge_costs",
    "steiner_backbone_kmb",
    "steiner_forest",
    "make_view_sbv",
    "transition_matrix",
    "gramian",
    "gramian_matrix",
    "make_view_cgv",
    "default_k",
    "compute_view_metrics",
]


class DisconnectedTerminalsError(ValueError):
    pass


def _sigmoid(s):
    return 0.5 * (1.0 + np.tanh(0.5 * s))


def first_exposure_probability(g, p):
    """Per-edge activation probability for a single active in-neighbour, x=1."""
    s = g.weight * (1.0 - p.gamma)
    return _sigmoid(s) if p.apply_sigmoid else np.clip(s, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class PropagationSample:
    graph: object
    live: np.ndarray        # (rounds, edge_count) bool
    rounds: int

    def union_mask(self):
        return self.live.any(axis=0)

    def union_graph(self):
        return self.graph.edge_subgraph(self.union_mask())


def sample_propagation_graph(g, p, rounds=200, rng_seed=0):
    """Live-edge samples: each round keeps edge e with its first-exposure probability."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    prob = first_exposure_probability(g, p)
    r = np.arange(rounds)[:, None]
    e = np.arange(g.edge_count)[None, :]
    live = counter_uniform(rng_seed, r, e) < prob[None, :]
    return PropagationSample(graph=g, live=live, rounds=rounds)


# -- path inverse entropy -----------------------------------------------------

def _best_first_paths(graph, u, *, max_hops, max_paths, max_expansions, target=None):
    """Accumulate ``-sum Pr(p) ln Pr(p)`` over the most probable simple paths from u.

    Paths are popped in non-increasing probability (weights are <= 1), so the
    first ``max_paths`` paths reaching a node are its most probable ones.
    Returns ``{v: entropy_sum}`` for every reached v != u.
    """
    nb = graph.neighbors
    ptr, nbr, wts = nb.out_ptr, nb.out_nbr, graph.weight
    acc, counts = {}, {}
    heap = [(-1.0, 0, u, (u,))]
    tick = 1
    expansions = 0
    while heap and expansions < max_expansions:
        negp, _, node, path = heapq.heappop(heap)
        prob = -negp
        expansions += 1
        if node != u:
            c = counts.get(node, 0)
            if c < max_paths:
                counts[node] = c + 1
                acc[node] = acc.get(node, 0.0) - (prob * math.log(prob) if prob < 1.0 else 0.0)
                if target is not None and node == target and c + 1 >= max_paths:
                    break
        if len(path) > max_hops:
            continue
        for k in range(ptr[node], ptr[node + 1]):
            v, w = int(nbr[k]), wts[k]
            if w <= 0.0 or v in path:
                continue
            heapq.heappush(heap, (-(prob * w), tick, v, path + (v,)))
            tick += 1
    return acc


def path_inverse_entropy(sample, u, v, max_hops=5, max_paths=64, epsilon=1e-6,
                         max_expansions=100_000):
    """Inverse Shannon entropy of the path-probability mass from u to v.

    Paths live in the union of the sampled live graphs and have probability
    equal to the product of edge weights. Returns 0 when v is unreachable
    within ``max_hops``.
    """
    if u == v:
        raise ValueError("u and v must differ")
    acc = _best_first_paths(sample.union_graph(), int(u), max_hops=max_hops,
                            max_paths=max_paths, max_expansions=max_expansions,
                            target=int(v))
    if v not in acc:
        return 0.0
    return 1.0 / (acc[v] + epsilon)


@dataclass(frozen=True, eq=False)
class PathEntropyTable:
    """Sparse ``(u, v) -> H(u, v)`` table; absent pairs have no path."""

    pairs: np.ndarray       # (P, 2) int64
    values: np.ndarray      # (P,) positive
    epsilon: float
    node_count: int

    def as_dict(self):
        return {(int(a), int(b)): float(h) for (a, b), h in zip(self.pairs, self.values)}

    def get(self, u, v):
        return self.as_dict().get((int(u), int(v)), 0.0)

    def target_scores(self):
        """``s_v = |V|^-1 sum_u H(u, v)`` for every node."""
        if len(self.values) == 0:
            return np.zeros(self.node_count)
        return np.bincount(self.pairs[:, 1], weights=self.values,
                           minlength=self.node_count) / self.node_count


def entropy_table(sample, sources, max_hops=5, max_paths=64, epsilon=1e-6,
                  max_expansions=4096):
    """H(u, v) for every source u and every v reachable from it."""
    union = sample.union_graph()
    pairs, vals = [], []
    for u in check_node_set(sources, union.node_count):
        acc = _best_first_paths(union, int(u), max_hops=max_hops, max_paths=max_paths,
                                max_expansions=max_expansions)
        for v in sorted(acc):
            pairs.append((int(u), v))
            vals.append(1.0 / (acc[v] + epsilon))
    return PathEntropyTable(pairs=np.asarray(pairs, dtype=np.int64).reshape(-1, 2),
                            values=np.asarray(vals, dtype=np.float64),
                            epsilon=epsilon, node_count=union.node_count)


def candidate_sources(g, count, rng_seed=0):
    """Top-degree nodes plus a uniform sample, ``count`` in total."""
    count = min(count, g.node_count)
    deg = g.in_degree + g.out_degree
    top = top_k_indices(deg, (count + 1) // 2)
    rest = np.setdiff1d(np.arange(g.node_count), top)
    rng = np.random.default_rng(rng_seed)
    extra = rng.choice(rest, size=min(count - len(top), len(rest)), replace=False)
    return np.sort(np.concatenate([top, extra]).astype(np.int64))


def select_terminals(table, node_count, k):
    """The k nodes with largest mean inverse entropy; ties to the smaller id."""
    check_top_k(k, node_count)
    scores = np.zeros(node_count)
    s = table.target_scores()
    scores[:len(s)] = s
    return np.sort(top_k_indices(scores, k))


# -- Steiner backbone -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Backbone:
    edges: np.ndarray       # (B, 2) undirected pairs with a < b
    terminals: np.ndarray
    cost: float

    def edge_set(self):
        return {(int(a), int(b)) for a, b in self.edges}


def edge_costs(g, table=None, epsilon=1e-6):
    """Undirected edge costs ``1 / H`` for KMB.

    Uses the table entry for either orientation when present (the larger H,
    i.e. cheaper), otherwise the inverse entropy of the single-arc path.
    Returns ``{(a, b): cost}`` with ``a < b``.
    """
    known = table.as_dict() if table is not None else {}
    costs = {}
    for s, d, w in zip(g.src.tolist(), g.dst.tolist(), g.weight.tolist()):
        a, b = (s, d) if s < d else (d, s)
        h = max(known.get((s, d), 0.0), known.get((d, s), 0.0))
        if h <= 0.0:
            ent = -w * math.log(w) if 0.0 < w < 1.0 else 0.0
            h = 1.0 / (ent + epsilon)
        c = 1.0 / h
        if (a, b) not in costs or c < costs[(a, b)]:
            costs[(a, b)] = c
    return costs


def _cost_matrix(n, costs):
    if not costs:
        return sp.csr_matrix((n, n))
    ab = np.array(list(costs.keys()), dtype=np.int64)
    c = np.maximum(np.array(list(costs.values()), dtype=np.float64), 1e-300)
    m = sp.coo_matrix((c, (ab[:, 0], ab[:, 1])), shape=(n, n))
    return (m + m.T).tocsr()


def _tree_cost(edges, costs):
    return float(sum(costs[(int(a), int(b))] for a, b in edges))


def steiner_backbone_kmb(g, terminals, edge_cost):
    """Kou-Markowsky-Berman 2-approximate Steiner tree on the undirected skeleton.

    ``edge_cost`` maps undirected pairs ``(a, b)``, ``a < b``, to positive
    costs. Steps: metric closure over terminals, MST of the closure, unfold to
    shortest paths, spanning tree of the union, iterative pruning of
    non-terminal leaves.
    """
    n = g.node_count
    term = check_node_set(terminals, n, allow_empty=False)
    costs = {(min(a, b), max(a, b)): float(c) for (a, b), c in edge_cost.items()}
    if len(term) == 1:
        return Backbone(edges=np.zeros((0, 2), dtype=np.int64), terminals=term, cost=0.0)
    C = _cost_matrix(n, costs)
    dist, pred = csgraph.dijkstra(C, directed=False, indices=term, return_predecessors=True)
    closure = dist[:, term]
    if not np.all(np.isfinite(closure)):
        _, comp = csgraph.connected_components(C, directed=False)
        groups = {}
        for t in term:
            groups.setdefault(int(comp[t]), []).append(int(t))
        raise DisconnectedTerminalsError(
            f"terminals span {len(groups)} components: {sorted(groups.values())}")
    mst = csgraph.minimum_spanning_tree(sp.csr_matrix(closure)).tocoo()

    used = set()
    for i, j in zip(mst.row.tolist(), mst.col.tolist()):
        node = int(term[j])
        while node != term[i]:
            prev = int(pred[i, node])
            used.add((min(prev, node), max(prev, node)))
            node = prev
    ab = np.array(sorted(used), dtype=np.int64)
    sub = sp.coo_matrix((np.maximum([costs[tuple(e)] for e in ab.tolist()], 1e-300),
                         (ab[:, 0], ab[:, 1])), shape=(n, n))
    tree = csgraph.minimum_spanning_tree(sub.tocsr()).tocoo()
    edges = {(min(a, b), max(a, b)) for a, b in zip(tree.row.tolist(), tree.col.tolist())}

    term_set = set(term.tolist())
    while True:
        deg = {}
        for a, b in edges:
            deg[a] = deg.get(a, 0) + 1
            deg[b] = deg.get(b, 0) + 1
        leaves = {v for v, d in deg.items() if d == 1 and v not in term_set}
        if not leaves:
            break
        edges = {e for e in edges if e[0] not in leaves and e[1] not in leaves}
    out = np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)
    return Backbone(edges=out, terminals=term, cost=_tree_cost(out, costs))


def steiner_forest(g, terminals, edge_cost):
    """KMB per connected component of the skeleton; union of the trees."""
    term = check_node_set(terminals, g.node_count, allow_empty=False)
    _, comp = csgraph.connected_components(g.skeleton(), directed=False)
    parts, cost = [], 0.0
    for c in np.unique(comp[term]):
        b = steiner_backbone_kmb(g, term[comp[term] == c], edge_cost)
        parts.append(b.edges)
        cost += b.cost
    edges = np.concatenate(parts) if parts else np.zeros((0, 2), dtype=np.int64)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return Backbone(edges=edges[order], terminals=term, cost=cost)


# -- views --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class View:
    """An augmented copy of a graph.

    ``graph`` carries the retained arcs and masked features; ``edge_mask``
    marks which arcs of the original were kept; ``feature_mask`` is the shared
    per-dimension mask and ``masked_rows`` the nodes it was applied to.
    """

    graph: object
    edge_mask: np.ndarray
    feature_mask: np.ndarray
    masked_rows: np.ndarray
    provenance: str

    @property
    def adjacency(self):
        return {(int(s), int(d)) for s, d in zip(self.graph.src, self.graph.dst)}


def _pair_index(g):
    """Index shared by both arcs of an undirected pair; arc index if directed."""
    if g.directed:
        return np.arange(g.edge_count), g.edge_count
    lo, hi = np.minimum(g.src, g.dst), np.maximum(g.src, g.dst)
    uniq, inv = np.unique(lo * g.node_count + hi, return_inverse=True)
    return inv, len(uniq)


def _drop_edges(g, protected, p_r, rng):
    pid, n_pairs = _pair_index(g)
    keep_pair = rng.random(n_pairs) >= p_r
    return keep_pair[pid] | protected


def make_view_sbv(g, backbone, p_r, p_m, rng_seed=0):
    """Keep backbone edges, drop other edges w.p. p_r, mask feature dims w.p. p_m."""
    check_probability(p_r, "p_r")
    check_probability(p_m, "p_m")
    rng = np.random.default_rng(rng_seed)
    bb = backbone.edge_set()
    lo, hi = np.minimum(g.src, g.dst), np.maximum(g.src, g.dst)
    protected = np.fromiter(((int(a), int(b)) in bb for a, b in zip(lo, hi)),
                            dtype=bool, count=g.edge_count)
    keep = _drop_edges(g, protected, p_r, rng)
    fmask = rng.random(g.feature_dim) >= p_m
    x = g.features * fmask[None, :]
    return View(graph=g.edge_subgraph(keep).with_features(x), edge_mask=keep,
                feature_mask=fmask, masked_rows=np.arange(g.node_count), provenance="SBV")


def transition_matrix(g):
    """Row-normalised weighted adjacency; rows of sinks stay zero."""
    a = g.adjacency(weighted=True)
    rs = np.asarray(a.sum(axis=1)).ravel()
    inv = np.divide(1.0, rs, out=np.zeros_like(rs), where=rs > 0)
    return (sp.diags(inv) @ a).tocsr()


@dataclass(frozen=True)
class GramianScores:
    scores: np.ndarray
    horizon: int


def gramian(P, J=4):
    """Row sums of ``W_c = sum_{t=0..J} P^t (P^t)^T``.

    Uses ``rowsum(P^t P^tT) = P^t (P^tT 1)``, so only matrix-vector products
    are needed: ``O(J^2 * nnz(P))``.
    """
    if J < 0:
        raise ValueError("J must be >= 0")
    P = sp.csr_matrix(P)
    PT = P.T.tocsr()
    n = P.shape[0]
    col = np.ones(n)
    total = np.ones(n)
    for t in range(1, J + 1):
        col = PT @ col
        v = col
        for _ in range(t):
            v = P @ v
        total += v
    return GramianScores(scores=total, horizon=J)


def gramian_matrix(P, J=4):
    """Dense ``W_c`` (small graphs only)."""
    Pd = sp.csr_matrix(P).toarray()
    Pt = np.eye(Pd.shape[0])
    W = np.eye(Pd.shape[0])
    for _ in range(J):
        Pt = Pt @ Pd
        W += Pt @ Pt.T
    return W


def make_view_cgv(g, scores, k, p_r, p_m, rng_seed=0):
    """Top-k controllability nodes keep incident edges and unmasked features."""
    check_top_k(k, g.node_count)
    check_probability(p_r, "p_r")
    check_probability(p_m, "p_m")
    rng = np.random.default_rng(rng_seed)
    src_nodes = np.zeros(g.node_count, dtype=bool)
    src_nodes[top_k_indices(scores.scores, k)] = True
    protected = src_nodes[g.src] | src_nodes[g.dst]
    keep = _drop_edges(g, protected, p_r, rng)
    fmask = rng.random(g.feature_dim) >= p_m
    rows = np.flatnonzero(~src_nodes)
    x = g.features.copy()
    x[rows] *= fmask[None, :]
    return View(graph=g.edge_subgraph(keep).with_features(x), edge_mask=keep,
                feature_mask=fmask, masked_rows=rows, provenance="CGV")


# -- end-to-end metric computation ----------------------------------------------

def default_k(node_count):
    """ceil(5% of nodes) clamped to [4, 256], never above node_count."""
    return int(min(node_count, max(4, min(256, math.ceil(0.05 * node_count)))))


@dataclass
class ViewConfig:
    p_r: float = 0.2
    p_m: float = 0.2
    k: int | None = None
    J: int = 4
    rounds: int = 200
    max_hops: int = 5
    max_paths: int = 64
    epsilon: float = 1e-6
    n_sources: int | None = None
    max_expansions: int = 4096

    def sources_for(self, n):
        if self.n_sources is not None:
            return min(n, self.n_sources)
        return int(min(n, max(16, min(512, math.ceil(0.1 * n)))))


@dataclass(eq=False)
class ViewMetrics:
    """Everything the view constructors need, computed once per graph."""

    terminals: np.ndarray
    backbone: Backbone
    gramian: GramianScores
    k: int
    table: PathEntropyTable | None = None
    timings: dict = field(default_factory=dict)

    def sbv(self, g, config, rng_seed):
        return make_view_sbv(g, self.backbone, config.p_r, config.p_m, rng_seed)

    def cgv(self, g, config, rng_seed):
        return make_view_cgv(g, self.gramian, self.k, config.p_r, config.p_m, rng_seed)


def compute_view_metrics(g, params, config=None, rng_seed=0):
    """Exact path-entropy table, terminals, Steiner backbone and Gramian scores."""
    import time

    config = config or ViewConfig()
    k = config.k if config.k is not None else default_k(g.node_count)
    t0 = time.perf_counter()
    sample = sample_propagation_graph(g, params, config.rounds, rng_seed)
    sources = candidate_sources(g, config.sources_for(g.node_count), rng_seed)
    table = entropy_table(sample, sources, config.max_hops, config.max_paths,
                          config.epsilon, config.max_expansions)
    terminals = select_terminals(table, g.node_count, k)
    t1 = time.perf_counter()
    backbone = steiner_forest(g, terminals, edge_costs(g, table, config.epsilon))
    t2 = time.perf_counter()
    scores = gramian(transition_matrix(g), config.J)
    t3 = time.perf_counter()
    return ViewMetrics(terminals=terminals, backbone=backbone, gramian=scores, k=k,
                       table=table, timings={"entropy": t1 - t0, "steiner": t2 - t1,
                                             "gramian": t3 - t2})
