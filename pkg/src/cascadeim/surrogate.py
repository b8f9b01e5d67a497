"""Attention-based regression surrogate for path entropy and controllability.

Each node carries two fixed random vectors, an initiator state ``S`` and a
receiver state ``T``. ``K`` direction-aware attention layers refine them,
mixing a diffusion prior on each edge with learned attention weights, and two
small MLP heads regress ``H(u, v)`` from ``[S_u, T_v]`` and ``C(i)`` from
``[S_i, T_i]``. Trained on exact labels from small subgraphs, the model
replaces the exact metrics on graphs where they are too expensive.
"""

from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .validation import check_graph, top_k_indices
from .views import (
    ViewConfig,
    ViewMetrics,
    candidate_sources,
    default_k,
    entropy_table,
    first_exposure_probability,
    gramian,
    sample_propagation_graph,
    select_terminals,
    steiner_forest,
    transition_matrix,
)

logger = logging.getLogger(__name__)

DTYPE = torch.float64

__all__ = [
    "DualEmbeddings",
    "SurrogateNet",
    "GraphTensors",
    "RegressionDataset",
    "TrainingDiverged",
    "init_embeddings",
    "attention_score",
    "attention_weights",
    "aggregate_messages",
    "layer_update",
    "train_surrogate",
    "build_dataset",
    "bfs_ball",
    "bootstrap_ci",
    "measure_speedup",
    "MetricSurrogate",
]


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class DualEmbeddings:
    S: torch.Tensor
    T: torch.Tensor


def init_embeddings(node_count, dim=32, seed=0, std=0.1):
    gen = torch.Generator().manual_seed(int(seed))
    S = torch.randn(node_count, dim, generator=gen, dtype=DTYPE) * std
    T = torch.randn(node_count, dim, generator=gen, dtype=DTYPE) * std
    return DualEmbeddings(S, T)


@dataclass
class GraphTensors:
    """Edge arrays of one graph, per direction.

    For direction ``d`` the message for node ``v`` comes from ``u`` over the
    arrays ``nbr[d]`` (the u's) and ``tgt[d]`` (the v's) with prior ``prior[d]``.
    """

    node_count: int
    nbr: dict
    tgt: dict
    prior: dict

    @classmethod
    def from_graph(cls, g, params):
        prob = torch.as_tensor(first_exposure_probability(g, params), dtype=DTYPE)
        src = torch.tensor(g.src, dtype=torch.long)
        dst = torch.tensor(g.dst, dtype=torch.long)
        # in: u -> v over u's out-edge; out: v's out-neighbour u, prior of edge v -> u
        return cls(g.node_count, nbr={"in": src, "out": dst}, tgt={"in": dst, "out": src},
                   prior={"in": prob, "out": prob})


class _Head(torch.nn.Module):
    def __init__(self, width, hidden):
        super().__init__()
        self.fc1 = torch.nn.Linear(width, hidden, dtype=DTYPE)
        self.fc2 = torch.nn.Linear(hidden, 1, dtype=DTYPE)

    def forward(self, x):
        return self.fc2(torch.relu(self.fc1(x))).squeeze(-1)


class _Direction(torch.nn.Module):
    def __init__(self, dim, gen):
        super().__init__()
        def rnd(*shape):
            return torch.nn.Parameter(torch.randn(*shape, generator=gen, dtype=DTYPE) * dim ** -0.5)
        self.W_s = rnd(dim, dim)
        self.W_t = rnd(dim, dim)
        self.a = rnd(2 * dim)
        self.eta = torch.nn.Parameter(torch.tensor(1.0, dtype=DTYPE))
        self.rho = torch.nn.Parameter(torch.tensor(1.0, dtype=DTYPE))


class _Layer(torch.nn.Module):
    def __init__(self, dim, gen):
        super().__init__()
        self.dirs = torch.nn.ModuleDict({"out": _Direction(dim, gen), "in": _Direction(dim, gen)})
        self.lambda_s = torch.nn.Parameter(torch.tensor(1.0, dtype=DTYPE))
        self.lambda_q = torch.nn.Parameter(torch.tensor(1.0, dtype=DTYPE))
        self.mu_t = torch.nn.Parameter(torch.tensor(1.0, dtype=DTYPE))
        self.mu_x = torch.nn.Parameter(torch.tensor(1.0, dtype=DTYPE))


class SurrogateNet(torch.nn.Module):
    def __init__(self, dim=32, layers=2, hidden=32, slope=0.2, seed=0):
        super().__init__()
        gen = torch.Generator().manual_seed(int(seed))
        self.dim, self.slope = dim, slope
        self.layers = torch.nn.ModuleList(_Layer(dim, gen) for _ in range(layers))
        torch.manual_seed(int(seed))
        self.entropy_head = _Head(2 * dim, hidden)
        self.control_head = _Head(2 * dim, hidden)

    def forward(self, gt, emb):
        for k in range(len(self.layers)):
            emb = layer_update(emb, k, self, gt)
        return emb

    def predict_pairs(self, emb, u, v):
        return self.entropy_head(torch.cat([emb.S[u], emb.T[v]], dim=-1))

    def predict_nodes(self, emb, i):
        return self.control_head(torch.cat([emb.S[i], emb.T[i]], dim=-1))


# -- the per-layer operations ------------------------------------------------------

def attention_score(u, v, layer, direction, net, emb):
    """``a^T (W_s S_u || W_t T_v)`` for one ordered pair (tensor-valued)."""
    p = net.layers[layer].dirs[direction]
    return p.a @ torch.cat([p.W_s @ emb.S[u], p.W_t @ emb.T[v]])


def _edge_scores(net, layer, direction, emb, gt):
    p = net.layers[layer].dirs[direction]
    d = net.dim
    left = (emb.S @ p.W_s.T) @ p.a[:d]       # per-node initiator part
    right = (emb.T @ p.W_t.T) @ p.a[d:]      # per-node receiver part
    return left[gt.nbr[direction]] + right[gt.tgt[direction]]


def _grouped_softmax(scores, group, n):
    m = torch.full((n,), -torch.inf, dtype=scores.dtype).scatter_reduce(
        0, group, scores, reduce="amax", include_self=True)
    e = torch.exp(scores - m[group])
    z = torch.zeros(n, dtype=scores.dtype).index_add(0, group, e)
    return e / z[group]


def _edge_weights(net, layer, direction, emb, gt):
    psi = _edge_scores(net, layer, direction, emb, gt)
    act = torch.nn.functional.leaky_relu(psi, net.slope)
    return _grouped_softmax(act, gt.tgt[direction], gt.node_count)


def attention_weights(v, layer, direction, net, emb, gt):
    """Softmax weights over the direction-``d`` neighbourhood of v.

    Returns ``(neighbours, weights)``; both empty for an isolated node.
    """
    w = _edge_weights(net, layer, direction, emb, gt)
    sel = gt.tgt[direction] == v
    return gt.nbr[direction][sel], w[sel]


def _messages(net, layer, direction, emb, gt):
    p = net.layers[layer].dirs[direction]
    w = _edge_weights(net, layer, direction, emb, gt)
    coef = p.eta * gt.prior[direction] + p.rho * w
    H = emb.S if direction == "out" else emb.T
    msg = coef[:, None] * H[gt.nbr[direction]]
    return torch.zeros(gt.node_count, net.dim, dtype=DTYPE).index_add(0, gt.tgt[direction], msg)


def aggregate_messages(v, layer, direction, net, emb, gt):
    """``sum_u (eta * prior_uv + rho * attention_uv) * H_u`` for node v."""
    return _messages(net, layer, direction, emb, gt)[v]


def layer_update(emb, layer, net, gt):
    """Combine self-state and directional messages through a sigmoid."""
    L = net.layers[layer]
    m_out = _messages(net, layer, "out", emb, gt)
    m_in = _messages(net, layer, "in", emb, gt)
    S = torch.sigmoid(L.lambda_s * emb.S + L.lambda_q * m_out)
    T = torch.sigmoid(L.mu_t * emb.T + L.mu_x * m_in)
    return DualEmbeddings(S, T)


# -- datasets and training -----------------------------------------------------------

@dataclass(eq=False)
class RegressionDataset:
    """Exact labels on one graph with a train/validation split."""

    graph: object
    gt: GraphTensors
    pairs: np.ndarray          # (P, 2)
    h_labels: np.ndarray       # (P,)
    nodes: np.ndarray          # (Q,)
    c_labels: np.ndarray       # (Q,)
    pair_train: np.ndarray     # boolean masks over pairs / nodes
    node_train: np.ndarray
    init_seed: int = 0

    def __post_init__(self):
        for lab in (self.h_labels, self.c_labels):
            if not np.all(np.isfinite(lab)) or np.any(lab < 0):
                raise ValueError("labels must be finite and non-negative")


def _transform(y):
    return np.log1p(y)


def _inverse(z):
    return np.expm1(z)


def build_dataset(g, params, config=None, rng_seed=0, val_fraction=0.2):
    """Exact H (candidate sources to reachable targets) and C (all nodes) labels."""
    config = config or ViewConfig()
    sample = sample_propagation_graph(g, params, config.rounds, rng_seed)
    sources = candidate_sources(g, config.sources_for(g.node_count), rng_seed)
    table = entropy_table(sample, sources, config.max_hops, config.max_paths,
                          config.epsilon, config.max_expansions)
    c = gramian(transition_matrix(g), config.J).scores
    rng = np.random.default_rng(rng_seed)
    pair_train = rng.random(len(table.values)) >= val_fraction
    node_train = rng.random(g.node_count) >= val_fraction
    return RegressionDataset(graph=g, gt=GraphTensors.from_graph(g, params),
                             pairs=table.pairs, h_labels=table.values,
                             nodes=np.arange(g.node_count), c_labels=c,
                             pair_train=pair_train, node_train=node_train,
                             init_seed=rng_seed)


def _draw_seed(seed, draw):
    return (int(seed) * 1_000_003 + draw) % 2**63


class _Scaler:
    def __init__(self, values):
        z = _transform(np.asarray(values, dtype=np.float64))
        self.mean = float(z.mean()) if len(z) else 0.0
        self.std = float(z.std()) if len(z) and z.std() > 0 else 1.0

    def forward(self, y):
        return (_transform(y) - self.mean) / self.std

    def inverse(self, z):
        return _inverse(z * self.std + self.mean)


def _losses(net, ds, emb0, h_scaler, c_scaler, train):
    emb = net(ds.gt, emb0)
    pm = ds.pair_train if train else ~ds.pair_train
    nm = ds.node_train if train else ~ds.node_train
    loss = torch.zeros((), dtype=DTYPE)
    if pm.any():
        pr = ds.pairs[pm]
        yh = torch.as_tensor(h_scaler.forward(ds.h_labels[pm]), dtype=DTYPE)
        loss = loss + torch.mean((net.predict_pairs(emb, pr[:, 0], pr[:, 1]) - yh) ** 2)
    if nm.any():
        yc = torch.as_tensor(c_scaler.forward(ds.c_labels[nm]), dtype=DTYPE)
        loss = loss + torch.mean((net.predict_nodes(emb, ds.nodes[nm]) - yc) ** 2)
    return loss


def surrogate_loss(net, datasets, embs, h_scaler, c_scaler, train=True):
    """Mean over datasets of (entropy MSE + controllability MSE) on scaled targets."""
    total = sum(_losses(net, ds, e, h_scaler, c_scaler, train) for ds, e in zip(datasets, embs))
    return total / len(datasets)


def train_surrogate(datasets, net, epochs=300, lr=1e-2, optimizer="adam", dim=None,
                    scalers=None, history=None, resample_init=True):
    """Minimise the summed MSE of both heads; keep the best-validation weights.

    ``optimizer`` is ``"gd"`` (plain gradient descent) or ``"adam"``. With
    ``resample_init`` the random initial states are redrawn every epoch, so
    the network cannot memorise them and has to rely on structure.
    Returns ``(net, (h_scaler, c_scaler))``.
    """
    if not datasets or not any(ds.pair_train.any() or ds.node_train.any() for ds in datasets):
        raise ValueError("empty training split")
    dim = dim or net.dim
    embs = [init_embeddings(ds.graph.node_count, dim, ds.init_seed) for ds in datasets]
    if scalers is None:
        scalers = (_Scaler(np.concatenate([ds.h_labels[ds.pair_train] for ds in datasets])),
                   _Scaler(np.concatenate([ds.c_labels[ds.node_train] for ds in datasets])))
    h_s, c_s = scalers
    if lr == 0 or epochs == 0:
        return net, scalers
    opt = (torch.optim.SGD if optimizer == "gd" else torch.optim.Adam)(net.parameters(), lr=lr)
    has_val = any((~ds.pair_train).any() or (~ds.node_train).any() for ds in datasets)
    best, best_state = np.inf, None
    for epoch in range(epochs):
        opt.zero_grad()
        draw = embs
        if resample_init:
            draw = [init_embeddings(ds.graph.node_count, dim, _draw_seed(ds.init_seed, epoch + 1))
                    for ds in datasets]
        loss = surrogate_loss(net, datasets, draw, h_s, c_s, train=True)
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"non-finite surrogate loss at epoch {epoch} (lr={lr})")
        loss.backward()
        opt.step()
        with torch.no_grad():
            val = float(surrogate_loss(net, datasets, embs, h_s, c_s, train=not has_val))
        if history is not None:
            history.append((float(loss.detach()), val))
        if val < best:
            best = val
            best_state = {k: t.detach().clone() for k, t in net.state_dict().items()}
    if best_state is not None:
        net.load_state_dict(best_state)
    return net, scalers


# -- sub-sampling and timing ----------------------------------------------------------

def bfs_ball(g, center, radius=3, max_nodes=2000):
    """Nodes within ``radius`` hops of ``center`` on the skeleton, BFS order, capped."""
    s = g.skeleton()
    seen = {int(center)}
    order = [int(center)]
    frontier = deque([(int(center), 0)])
    while frontier and len(order) < max_nodes:
        u, d = frontier.popleft()
        if d == radius:
            continue
        for v in s.indices[s.indptr[u]:s.indptr[u + 1]]:
            v = int(v)
            if v not in seen:
                seen.add(v)
                order.append(v)
                frontier.append((v, d + 1))
                if len(order) >= max_nodes:
                    break
    return np.asarray(order, dtype=np.int64)


def bootstrap_ci(values, level=0.95, resamples=2000, seed=0):
    """Percentile bootstrap interval of the mean."""
    x = np.asarray(values, dtype=np.float64)
    if len(x) == 0:
        return (float("nan"), float("nan"))
    rng = np.random.default_rng(seed)
    means = x[rng.integers(0, len(x), size=(resamples, len(x)))].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, (1 + level) / 2])
    return (float(lo), float(hi))


def measure_speedup(exact_time, surrogate_time, errors, seed=0):
    """Wall-clock ratio and bootstrap CI over run-level relative errors."""
    errors = np.asarray(errors, dtype=np.float64)
    lo, hi = bootstrap_ci(errors, seed=seed)
    return {
        "exact_time_s": float(exact_time),
        "surrogate_time_s": float(surrogate_time),
        "speedup": float(exact_time) / float(surrogate_time),
        "error_mean": float(errors.mean()) if len(errors) else float("nan"),
        "error_ci_low": lo,
        "error_ci_high": hi,
    }


# -- estimator ---------------------------------------------------------------------

class MetricSurrogate(BaseEstimator):
    """Learned stand-in for the exact path-entropy and Gramian computations.

    ``fit`` labels ``n_subgraphs`` BFS balls (radius ``radius``, at most
    ``max_subgraph_nodes`` nodes) with the exact metrics and trains the
    network on them. ``predict_entropy`` / ``predict_controllability`` then
    run on any graph. By default the network is trained and applied with
    one fixed initial state; with ``resample_init`` it is trained on fresh
    draws each epoch and predictions average ``n_draws`` of them.
    """

    def __init__(self, dim=32, layers=4, hidden=64, epochs=4000, lr=5e-3,
                 optimizer="adam", n_subgraphs=1, radius=3, max_subgraph_nodes=2000,
                 n_draws=8, resample_init=False, view_config=None, random_state=0):
        self.dim = dim
        self.layers = layers
        self.hidden = hidden
        self.epochs = epochs
        self.lr = lr
        self.optimizer = optimizer
        self.n_subgraphs = n_subgraphs
        self.radius = radius
        self.max_subgraph_nodes = max_subgraph_nodes
        self.n_draws = n_draws
        self.resample_init = resample_init
        self.view_config = view_config
        self.random_state = random_state

    def _config(self):
        return self.view_config or ViewConfig()

    def fit(self, g, params, datasets=None):
        check_graph(g)
        self.params_ = params
        if datasets is None:
            datasets = []
            rng = np.random.default_rng(self.random_state)
            if g.node_count <= self.max_subgraph_nodes:
                datasets.append(build_dataset(g, params, self._config(), self.random_state))
            else:
                deg = g.in_degree + g.out_degree
                centers = rng.choice(g.node_count, size=self.n_subgraphs, replace=False,
                                     p=deg / deg.sum() if deg.sum() else None)
                for i, c in enumerate(centers):
                    nodes = bfs_ball(g, c, self.radius, self.max_subgraph_nodes)
                    sub, _ = g.induced_subgraph(nodes)
                    datasets.append(build_dataset(sub, params, self._config(),
                                                  self.random_state + i))
        self.net_ = SurrogateNet(self.dim, self.layers, self.hidden, seed=self.random_state)
        self.history_ = []
        self.net_, self.scalers_ = train_surrogate(datasets, self.net_, self.epochs, self.lr,
                                                   self.optimizer, history=self.history_,
                                                   resample_init=self.resample_init)
        return self

    def _embed(self, g, params=None):
        """Refined states for ``n_draws`` independent random initialisations."""
        gt = GraphTensors.from_graph(g, params or self.params_)
        with torch.no_grad():
            if not self.resample_init:
                # the states the network was trained against
                return [self.net_(gt, init_embeddings(g.node_count, self.dim, self.random_state))]
            return [self.net_(gt, init_embeddings(g.node_count, self.dim,
                                                  _draw_seed(self.random_state, -d)))
                    for d in range(self.n_draws)]

    def predict_entropy(self, g, pairs, embs=None):
        check_is_fitted(self, "net_")
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        embs = embs or self._embed(g)
        with torch.no_grad():
            z = np.mean([self.net_.predict_pairs(e, pairs[:, 0], pairs[:, 1]).numpy()
                         for e in embs], axis=0)
        return np.maximum(self.scalers_[0].inverse(z), 0.0)

    def predict_controllability(self, g, embs=None):
        check_is_fitted(self, "net_")
        embs = embs or self._embed(g)
        idx = np.arange(g.node_count)
        with torch.no_grad():
            z = np.mean([self.net_.predict_nodes(e, idx).numpy() for e in embs], axis=0)
        return np.maximum(self.scalers_[1].inverse(z), 0.0)

    def view_metrics(self, g, config=None, rng_seed=0, params=None):
        """Surrogate counterpart of :func:`views.compute_view_metrics`.

        ``params`` overrides the diffusion parameters seen at fit time, so a
        surrogate trained on a small graph can be applied to a larger one.
        """
        from .views import GramianScores, PathEntropyTable, edge_costs

        config = config or self._config()
        check_is_fitted(self, "net_")
        k = config.k if config.k is not None else default_k(g.node_count)
        t0 = time.perf_counter()
        embs = self._embed(g, params)
        sources = candidate_sources(g, config.sources_for(g.node_count), rng_seed)
        pairs = _reachable_pairs(g, sources, config.max_hops)
        h = self.predict_entropy(g, pairs, embs)
        table = PathEntropyTable(pairs=pairs, values=h, epsilon=config.epsilon,
                                 node_count=g.node_count)
        terminals = select_terminals(table, g.node_count, k)
        edge_pairs = np.column_stack([g.src, g.dst])
        edge_table = PathEntropyTable(pairs=edge_pairs, values=self.predict_entropy(g, edge_pairs, embs),
                                      epsilon=config.epsilon, node_count=g.node_count)
        t1 = time.perf_counter()
        backbone = steiner_forest(g, terminals, edge_costs(g, edge_table, config.epsilon))
        t2 = time.perf_counter()
        c = self.predict_controllability(g, embs)
        t3 = time.perf_counter()
        return ViewMetrics(terminals=terminals, backbone=backbone,
                           gramian=GramianScores(scores=c, horizon=config.J), k=k,
                           table=table, timings={"entropy": t1 - t0, "steiner": t2 - t1,
                                                 "gramian": t3 - t2})

    def top_controllability(self, g, k):
        return np.sort(top_k_indices(self.predict_controllability(g), k))


def _reachable_pairs(g, sources, max_hops):
    """(u, v) for sources u and every v != u within ``max_hops`` arcs."""
    a = g.adjacency(weighted=False)
    out = []
    for u in sources:
        frontier = np.zeros(g.node_count, dtype=bool)
        frontier[u] = True
        seen = frontier.copy()
        for _ in range(max_hops):
            frontier = (a.T @ frontier.astype(np.float64)) > 0
            frontier &= ~seen
            if not frontier.any():
                break
            seen |= frontier
        seen[u] = False
        vs = np.flatnonzero(seen)
        out.append(np.column_stack([np.full(len(vs), u), vs]))
    return np.concatenate(out) if out else np.zeros((0, 2), dtype=np.int64)
