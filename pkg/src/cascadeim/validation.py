"""Input validation helpers shared by the estimators."""

import numbers

import numpy as np


def check_graph(g, *, min_nodes=1):
    from .graph import Graph

    if not isinstance(g, Graph):
        raise TypeError(f"expected a Graph, got {type(g).__name__}")
    if g.node_count < min_nodes:
        raise ValueError(f"graph must have at least {min_nodes} node(s)")
    return g


def check_node_set(nodes, node_count, *, allow_empty=True):
    """Sorted unique int64 array of node ids, validated against ``node_count``."""
    arr = np.unique(np.asarray(list(nodes) if not isinstance(nodes, np.ndarray) else nodes,
                               dtype=np.int64).reshape(-1))
    if not allow_empty and len(arr) == 0:
        raise ValueError("node set must be non-empty")
    if len(arr) and (arr[0] < 0 or arr[-1] >= node_count):
        bad = arr[(arr < 0) | (arr >= node_count)]
        raise ValueError(f"invalid node id(s) {bad.tolist()} for {node_count} nodes")
    return arr


def check_probability(value, name):
    if not isinstance(value, numbers.Real) or not 0.0 <= value <= 1.0:
        raise ValueError(f"{name}={value!r} must be a probability in [0, 1]")
    return float(value)


def check_budget(budget, node_count):
    if not isinstance(budget, numbers.Integral) or budget < 0:
        raise ValueError(f"budget must be a non-negative integer, got {budget!r}")
    if budget > node_count:
        raise ValueError(f"budget {budget} exceeds node count {node_count}")
    return int(budget)


def check_top_k(k, node_count):
    if not isinstance(k, numbers.Integral) or k <= 0:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    if k > node_count:
        raise ValueError(f"k={k} exceeds node count {node_count}")
    return int(k)


def top_k_indices(scores, k):
    """Indices of the k largest scores; ties go to the smaller index."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(len(scores)), -scores))
    return order[:k]
