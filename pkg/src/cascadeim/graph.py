"""Directed weighted graphs, edge-list ingestion and incompleteness degradation."""

from __future__ import annotations

import csv
import hashlib
import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

__all__ = [
    "Graph",
    "NeighborIndex",
    "DegradationSpec",
    "GraphFormatError",
    "load_edge_list",
    "load_features",
    "save_edge_list",
    "assign_indegree_weights",
    "common_neighbor_ratio",
    "degrade",
    "structural_features",
    "graph_fingerprint",
]


class GraphFormatError(ValueError):
    """Malformed edge-list or feature file."""


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NeighborIndex:
    """CSR-style out- and in-adjacency of a graph.

    ``out_ptr[u]:out_ptr[u+1]`` slices ``out_nbr`` / ``out_edge`` for node u;
    the ``*_edge`` arrays hold positions into the parent graph's edge arrays.
    """

    out_ptr: np.ndarray
    out_nbr: np.ndarray
    out_edge: np.ndarray
    in_ptr: np.ndarray
    in_nbr: np.ndarray
    in_edge: np.ndarray

    @property
    def in_degree(self):
        return np.diff(self.in_ptr)

    @property
    def out_degree(self):
        return np.diff(self.out_ptr)

    def out_neighbors(self, u):
        return self.out_nbr[self.out_ptr[u]:self.out_ptr[u + 1]]

    def in_neighbors(self, v):
        return self.in_nbr[self.in_ptr[v]:self.in_ptr[v + 1]]


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable directed graph with per-edge probabilities and node features.

    Edges are stored as parallel ``src``/``dst``/``weight`` arrays sorted by
    ``(src, dst)``. Undirected inputs are stored as symmetric arc pairs with
    ``directed=False``. Use :meth:`from_edges` to build one from raw data; the
    constructor assumes already-canonical arrays.
    """

    node_count: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    directed: bool = True
    features: np.ndarray | None = None
    labels: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        n = int(self.node_count)
        if n < 0:
            raise ValueError("node_count must be non-negative")
        object.__setattr__(self, "node_count", n)
        src = np.asarray(self.src, dtype=np.int64).reshape(-1)
        dst = np.asarray(self.dst, dtype=np.int64).reshape(-1)
        w = np.asarray(self.weight, dtype=np.float64).reshape(-1)
        if not (len(src) == len(dst) == len(w)):
            raise ValueError("src, dst and weight must have equal length")
        if len(src):
            if src.min() < 0 or dst.min() < 0 or max(src.max(), dst.max()) >= n:
                raise ValueError("edge endpoint outside [0, node_count)")
            if np.any(src == dst):
                raise ValueError("self-loops are not allowed")
            if np.any(~np.isfinite(w)) or w.min() < 0 or w.max() > 1:
                raise ValueError("edge weights must lie in [0, 1]")
            key = src * n + dst
            if np.any(np.diff(key) <= 0):
                raise ValueError("edges must be sorted by (src, dst) without duplicates")
        if self.features is None:
            x = np.ones((n, 1))
        else:
            x = np.asarray(self.features, dtype=np.float64)
            if x.ndim == 1:
                x = x[:, None]
            if x.shape[0] != n:
                raise ValueError(f"features have {x.shape[0]} rows, expected {n}")
        object.__setattr__(self, "src", _readonly(src))
        object.__setattr__(self, "dst", _readonly(dst))
        object.__setattr__(self, "weight", _readonly(w))
        object.__setattr__(self, "features", _readonly(x))
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != n:
                raise ValueError("label map must cover every node")
            object.__setattr__(self, "labels", labels)

    @classmethod
    def from_edges(cls, node_count, edges, weights=None, *, directed=True,
                   features=None, labels=None):
        """Build a graph from an iterable of ``(src, dst)`` pairs.

        Self-loops are dropped and duplicate pairs deduplicated (first weight
        wins), each with a warning. When ``directed`` is False every pair is
        stored in both directions.
        """
        e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges,
                       dtype=np.int64).reshape(-1, 2)
        if weights is None:
            w = np.ones(len(e))
        else:
            w = np.asarray(weights, dtype=np.float64).reshape(-1)
            if len(w) != len(e):
                raise ValueError("one weight per edge required")
        loops = e[:, 0] == e[:, 1]
        if loops.any():
            warnings.warn(f"dropping {int(loops.sum())} self-loop(s)", stacklevel=2)
            e, w = e[~loops], w[~loops]
        if not directed:
            e = np.concatenate([e, e[:, ::-1]])
            w = np.concatenate([w, w])
        n = int(node_count)
        key = e[:, 0] * n + e[:, 1] if len(e) else np.zeros(0, dtype=np.int64)
        _, first = np.unique(key, return_index=True)
        n_dup = len(key) - len(first)
        if n_dup:
            warnings.warn(f"deduplicated {n_dup} repeated arc(s)", stacklevel=2)
        # np.unique sorts by key, i.e. by (src, dst)
        e, w = e[first], w[first]
        return cls(n, e[:, 0], e[:, 1], w, directed=directed,
                   features=features, labels=labels)

    # -- derived structure -------------------------------------------------

    @property
    def edge_count(self):
        return len(self.src)

    @property
    def feature_dim(self):
        return self.features.shape[1]

    @cached_property
    def neighbors(self):
        n = self.node_count
        out_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.src, minlength=n), out=out_ptr[1:])
        order = np.lexsort((self.src, self.dst))
        in_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.dst, minlength=n), out=in_ptr[1:])
        return NeighborIndex(
            out_ptr=_readonly(out_ptr),
            out_nbr=self.dst,
            out_edge=_readonly(np.arange(self.edge_count)),
            in_ptr=_readonly(in_ptr),
            in_nbr=_readonly(self.src[order]),
            in_edge=_readonly(order),
        )

    @cached_property
    def in_degree(self):
        return _readonly(np.bincount(self.dst, minlength=self.node_count))

    @cached_property
    def out_degree(self):
        return _readonly(np.bincount(self.src, minlength=self.node_count))

    def adjacency(self, weighted=True):
        """Sparse ``n x n`` matrix with ``A[src, dst] = weight`` (or 1)."""
        data = self.weight if weighted else np.ones(self.edge_count)
        return sp.csr_matrix((data, (self.src, self.dst)),
                             shape=(self.node_count, self.node_count))

    def skeleton(self):
        """Binary symmetric adjacency of the undirected skeleton (CSR)."""
        a = sp.csr_matrix((np.ones(self.edge_count), (self.src, self.dst)),
                          shape=(self.node_count, self.node_count))
        s = ((a + a.T) > 0).astype(np.float64)
        s.setdiag(0)
        s.eliminate_zeros()
        return s.tocsr()

    def edge_index(self, u, v):
        """Position of edge ``u -> v`` in the edge arrays, or -1."""
        ptr = self.neighbors.out_ptr
        lo, hi = ptr[u], ptr[u + 1]
        i = lo + np.searchsorted(self.dst[lo:hi], v)
        if i < hi and self.dst[i] == v:
            return int(i)
        return -1

    def has_edge(self, u, v):
        return self.edge_index(u, v) >= 0

    # -- functional updates ------------------------------------------------

    def replace(self, **changes):
        kw = dict(node_count=self.node_count, src=self.src, dst=self.dst,
                  weight=self.weight, directed=self.directed,
                  features=self.features, labels=self.labels)
        kw.update(changes)
        return Graph(**kw)

    def with_weights(self, weight):
        return self.replace(weight=weight)

    def with_features(self, features):
        return self.replace(features=features)

    def edge_subgraph(self, keep):
        """Keep the edges selected by a boolean mask (node set unchanged)."""
        keep = np.asarray(keep, dtype=bool)
        return self.replace(src=self.src[keep], dst=self.dst[keep],
                            weight=self.weight[keep])

    def induced_subgraph(self, nodes):
        """Subgraph on ``nodes`` re-indexed densely in the given order.

        Returns ``(subgraph, nodes)`` where ``nodes[i]`` is the parent id of
        node ``i`` in the subgraph.
        """
        nodes = np.asarray(nodes, dtype=np.int64)
        remap = np.full(self.node_count, -1, dtype=np.int64)
        remap[nodes] = np.arange(len(nodes))
        keep = (remap[self.src] >= 0) & (remap[self.dst] >= 0)
        s, d = remap[self.src[keep]], remap[self.dst[keep]]
        order = np.lexsort((d, s))
        labels = None if self.labels is None else tuple(self.labels[i] for i in nodes)
        sub = Graph(len(nodes), s[order], d[order], self.weight[keep][order],
                    directed=self.directed, features=self.features[nodes],
                    labels=labels)
        return sub, nodes

    def label_of(self, node):
        return str(node) if self.labels is None else self.labels[node]

    def node_of(self, label):
        if self.labels is None:
            return int(label)
        try:
            return self._label_index[str(label)]
        except KeyError:
            raise KeyError(f"unknown node label {label!r}") from None

    @cached_property
    def _label_index(self):
        return {lab: i for i, lab in enumerate(self.labels or ())}

    def __repr__(self):
        kind = "directed" if self.directed else "undirected"
        return (f"Graph(nodes={self.node_count}, arcs={self.edge_count}, {kind}, "
                f"features={self.feature_dim})")


# -- I/O -------------------------------------------------------------------

def _split(line, fmt):
    if fmt == "csv":
        return [t.strip() for t in next(csv.reader([line]))]
    return line.split()


def load_edge_list(path, format="whitespace-pairs", *, directed=True):
    """Read ``src dst [weight]`` lines into a :class:`Graph`.

    Blank lines and lines starting with ``#`` are skipped. Node labels are
    re-indexed densely: all-integer labels keep their numeric order, other
    labels are numbered by first appearance. Missing weights default to 1.
    """
    if format not in ("whitespace-pairs", "csv"):
        raise ValueError(f"unknown edge-list format {format!r}")
    pairs, weights = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tok = _split(line, format)
            if len(tok) not in (2, 3) or not tok[0] or not tok[1]:
                raise GraphFormatError(f"{path}:{lineno}: expected 'src dst [weight]', got {line!r}")
            w = 1.0
            if len(tok) == 3:
                try:
                    w = float(tok[2])
                except ValueError:
                    raise GraphFormatError(f"{path}:{lineno}: bad weight {tok[2]!r}") from None
                if not 0.0 <= w <= 1.0:
                    raise ValueError(f"{path}:{lineno}: weight {w} outside [0, 1]")
            pairs.append((tok[0], tok[1]))
            weights.append(w)

    seen = dict.fromkeys(t for p in pairs for t in p)
    try:
        ordered = sorted(seen, key=int)
    except ValueError:
        ordered = list(seen)
    index = {lab: i for i, lab in enumerate(ordered)}
    edges = np.array([(index[a], index[b]) for a, b in pairs], dtype=np.int64).reshape(-1, 2)
    return Graph.from_edges(len(ordered), edges, weights, directed=directed,
                            labels=tuple(ordered))


def load_features(path, node_count):
    """Dense feature matrix, one whitespace-separated row per node id."""
    try:
        x = np.loadtxt(path, dtype=np.float64, ndmin=2, comments="#")
    except ValueError as exc:
        raise GraphFormatError(f"{path}: {exc}") from None
    if x.shape[0] != node_count:
        raise GraphFormatError(f"{path}: {x.shape[0]} feature rows for {node_count} nodes")
    return x


def save_edge_list(g, path, *, weights=True, labels=True):
    """Write one ``src dst [weight]`` line per arc (or per pair if undirected)."""
    keep = np.ones(g.edge_count, dtype=bool) if g.directed else g.src < g.dst
    name = g.label_of if labels else str
    with open(path, "w", encoding="utf-8") as fh:
        for s, d, w in zip(g.src[keep], g.dst[keep], g.weight[keep]):
            if weights:
                fh.write(f"{name(s)} {name(d)} {float(w)!r}\n")
            else:
                fh.write(f"{name(s)} {name(d)}\n")


# -- derived quantities ------------------------------------------------------

def assign_indegree_weights(g):
    """Weight every edge ``j -> i`` by ``1 / d_in(i)``."""
    if g.edge_count == 0:
        return g
    return g.with_weights(1.0 / g.in_degree[g.dst])


def common_neighbor_ratio(g):
    """Average ego-centric common-neighbour overlap on the undirected skeleton.

    For each node u with neighbour set N_u, the mean over v in N_u of
    ``|N_u & N_v| / |N_u|``; isolated nodes contribute 0 but are counted.
    """
    if g.node_count == 0:
        raise ValueError("common_neighbor_ratio of an empty graph is undefined")
    s = g.skeleton()
    deg = np.asarray(s.sum(axis=1)).ravel()
    common = s.multiply(s @ s)
    per_node = np.asarray(common.sum(axis=1)).ravel()
    ratio = np.zeros(g.node_count)
    nz = deg > 0
    ratio[nz] = per_node[nz] / deg[nz] ** 2
    return float(ratio.mean())


@dataclass(frozen=True)
class DegradationSpec:
    edge_drop_rate: float = 0.5
    feature_mask_rate: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("edge_drop_rate", "feature_mask_rate"):
            r = getattr(self, name)
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"{name}={r} outside [0, 1]")


def degrade(g, spec):
    """Randomly drop edges and zero feature entries to mimic partial observation.

    For undirected graphs the two arcs of a pair are dropped together.
    """
    rng = np.random.default_rng(spec.rng_seed)
    if g.directed:
        keep = rng.random(g.edge_count) >= spec.edge_drop_rate
    else:
        lo, hi = np.minimum(g.src, g.dst), np.maximum(g.src, g.dst)
        pair_key = lo * g.node_count + hi
        uniq, inv = np.unique(pair_key, return_inverse=True)
        keep = (rng.random(len(uniq)) >= spec.edge_drop_rate)[inv]
    mask = rng.random(g.features.shape) < spec.feature_mask_rate
    x = np.where(mask, 0.0, g.features)
    return g.replace(src=g.src[keep], dst=g.dst[keep], weight=g.weight[keep],
                     features=x)


def structural_features(g):
    """Per-node structural descriptors for graphs without attribute files.

    Columns: constant 1, log(1+in-degree), log(1+out-degree), sum of outgoing
    edge weights, local clustering on the skeleton.
    """
    s = g.skeleton()
    deg = np.asarray(s.sum(axis=1)).ravel()
    tri = np.asarray(s.multiply(s @ s).sum(axis=1)).ravel()
    denom = deg * (deg - 1)
    clust = np.divide(tri, denom, out=np.zeros_like(tri), where=denom > 0)
    out_w = np.bincount(g.src, weights=g.weight, minlength=g.node_count)
    return np.column_stack([
        np.ones(g.node_count),
        np.log1p(g.in_degree),
        np.log1p(g.out_degree),
        out_w,
        clust,
    ])


def graph_fingerprint(g):
    """SHA-256 over topology, weights and features; equal graphs hash equal."""
    h = hashlib.sha256()
    h.update(np.int64(g.node_count).tobytes())
    for arr in (g.src, g.dst, g.weight, g.features):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()
