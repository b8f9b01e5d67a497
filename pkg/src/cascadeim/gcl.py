"""Contrastive node representations from the backbone and controllability views."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._rng import child_seed
from .validation import check_graph
from .views import ViewConfig, compute_view_metrics

logger = logging.getLogger(__name__)

DTYPE = torch.float64

__all__ = [
    "MeanEncoder",
    "Projection",
    "ContrastiveBatch",
    "TrainingDiverged",
    "mean_operator",
    "encode",
    "critic",
    "similarity_matrices",
    "pairwise_loss",
    "objective",
    "train_gcl",
    "ContrastiveEncoder",
]


class TrainingDiverged(RuntimeError):
    pass


def mean_operator(g):
    """Sparse ``(n, n)`` torch operator averaging each node with its skeleton neighbours."""
    s = g.skeleton() + sp.eye(g.node_count, format="csr")
    deg = np.asarray(s.sum(axis=1)).ravel()
    m = (sp.diags(1.0 / deg) @ s).tocoo()
    idx = torch.tensor(np.vstack([m.row, m.col]), dtype=torch.long)
    return torch.sparse_coo_tensor(idx, torch.tensor(m.data, dtype=DTYPE), m.shape,
                                   check_invariants=False).coalesce()


class MeanEncoder(torch.nn.Module):
    """``h_v <- relu(W mean(h_u : u in N(v) + {v}))`` for each layer, L2-normalised output."""

    def __init__(self, in_dim, widths=(64, 64), seed=0):
        super().__init__()
        torch.manual_seed(int(seed))
        dims = (in_dim, *widths)
        self.lins = torch.nn.ModuleList(
            torch.nn.Linear(a, b, dtype=DTYPE) for a, b in zip(dims[:-1], dims[1:]))

    @property
    def out_dim(self):
        return self.lins[-1].out_features

    def forward(self, x, op):
        h = x
        for lin in self.lins:
            h = torch.relu(lin(torch.sparse.mm(op, h)))
        return torch.nn.functional.normalize(h, dim=1, eps=1e-12)


class Projection(torch.nn.Module):
    """Two-layer perceptron ``d -> d_proj -> d_proj`` with an ELU in between."""

    def __init__(self, dim, proj_dim=64, seed=0):
        super().__init__()
        torch.manual_seed(int(seed) + 1)
        self.fc1 = torch.nn.Linear(dim, proj_dim, dtype=DTYPE)
        self.fc2 = torch.nn.Linear(proj_dim, proj_dim, dtype=DTYPE)

    def forward(self, z):
        return self.fc2(torch.nn.functional.elu(self.fc1(z)))


def encode(view_graph, encoder):
    """Embeddings of a (view) graph; a torch tensor with autograd intact."""
    x = torch.as_tensor(np.array(view_graph.features), dtype=DTYPE)
    return encoder(x, mean_operator(view_graph))


def _cosine(a, b):
    na, nb = a.norm(dim=-1), b.norm(dim=-1)
    return (a * b).sum(-1) / (na * nb).clamp_min(1e-300), (na == 0) | (nb == 0)


def critic(u, v, proj):
    """Cosine similarity of the projected vectors; 0 if either projection vanishes."""
    gu, gv = proj(torch.as_tensor(u, dtype=DTYPE)), proj(torch.as_tensor(v, dtype=DTYPE))
    cos, degenerate = _cosine(gu, gv)
    if bool(degenerate.any()):
        warnings.warn("zero projected vector in critic; similarity set to 0", stacklevel=2)
        cos = torch.where(degenerate, torch.zeros_like(cos), cos)
    return cos


@dataclass
class ContrastiveBatch:
    U: torch.Tensor
    V: torch.Tensor
    tau: float = 0.5

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("temperature tau must be positive")
        if self.U.shape != self.V.shape:
            raise ValueError("U and V must have the same shape")

    def swapped(self):
        return ContrastiveBatch(self.V, self.U, self.tau)


def _normalize_rows(z):
    return torch.nn.functional.normalize(z, dim=1, eps=1e-300)


def similarity_matrices(batch, proj):
    """Inter-view ``theta(u_i, v_k)`` and intra-view ``theta(u_i, u_k)`` matrices."""
    gu, gv = _normalize_rows(proj(batch.U)), _normalize_rows(proj(batch.V))
    return gu @ gv.T, gu @ gu.T


def _row_losses(inter, intra, tau):
    n = inter.shape[0]
    off = ~torch.eye(n, dtype=torch.bool)
    pos = torch.diagonal(inter) / tau
    # candidates: the positive, the n-1 inter-view negatives, the n-1 intra-view ones
    cand = torch.cat([pos[:, None], (inter / tau)[off].view(n, n - 1),
                      (intra / tau)[off].view(n, n - 1)], dim=1)
    return pos - torch.logsumexp(cand, dim=1)


def pairwise_loss(i, batch, proj):
    """``log(e^{pos} / (e^{pos} + Q + Z))`` for anchor ``u_i`` (always <= 0)."""
    if batch.U.shape[0] < 2:
        raise ValueError("need at least two nodes")
    inter, intra = similarity_matrices(batch, proj)
    return _row_losses(inter, intra, batch.tau)[i]


def objective(batch, proj):
    """Mean of both anchor directions' pairwise losses; training maximises it."""
    inter, intra = similarity_matrices(batch, proj)
    inter_t = inter.T  # theta(v_i, u_k)
    _, intra_v = similarity_matrices(batch.swapped(), proj)
    n = batch.U.shape[0]
    return (_row_losses(inter, intra, batch.tau).sum()
            + _row_losses(inter_t, intra_v, batch.tau).sum()) / (2 * n)


def train_gcl(g, metrics, view_config, epochs=100, lr=1e-3, tau=0.5, rng_seed=0,
              widths=(64, 64), proj_dim=64, history=None):
    """Alternate fresh SBV/CGV draws with gradient steps on ``-objective``.

    Returns ``(encoder, projection, embeddings)`` where the embeddings are
    the encoder's output on the un-augmented graph.
    """
    check_graph(g)
    enc = MeanEncoder(g.feature_dim, widths, seed=rng_seed)
    proj = Projection(enc.out_dim, proj_dim, seed=rng_seed)
    params = list(enc.parameters()) + list(proj.parameters())
    opt = torch.optim.Adam(params, lr=lr) if lr > 0 else None
    for epoch in range(epochs):
        v1 = metrics.sbv(g, view_config, child_seed(rng_seed, epoch, 1))
        v2 = metrics.cgv(g, view_config, child_seed(rng_seed, epoch, 2))
        batch = ContrastiveBatch(encode(v1.graph, enc), encode(v2.graph, enc), tau)
        J = objective(batch, proj)
        if not torch.isfinite(J):
            raise TrainingDiverged(f"non-finite contrastive objective at epoch {epoch}")
        if history is not None:
            history.append(float(J.detach()))
        if opt is not None:
            opt.zero_grad()
            (-J).backward()
            opt.step()
    with torch.no_grad():
        z = encode(g, enc).numpy()
    return enc, proj, z


class ContrastiveEncoder(TransformerMixin, BaseEstimator):
    """Learns node embeddings by contrasting the backbone and controllability views.

    ``fit(g)`` computes the view metrics (exactly, or through ``surrogate``
    when the graph has at least ``surrogate_threshold`` nodes) and trains the
    encoder; ``transform(g)`` embeds any graph with the same feature width.
    """

    def __init__(self, epochs=100, lr=1e-3, tau=0.5, widths=(64, 64), proj_dim=64,
                 view_config=None, diffusion_params=None, surrogate=None,
                 surrogate_threshold=5000, random_state=0):
        self.epochs = epochs
        self.lr = lr
        self.tau = tau
        self.widths = widths
        self.proj_dim = proj_dim
        self.view_config = view_config
        self.diffusion_params = diffusion_params
        self.surrogate = surrogate
        self.surrogate_threshold = surrogate_threshold
        self.random_state = random_state

    def _metrics(self, g):
        from .diffusion import DiffusionParams
        from .graph import common_neighbor_ratio

        cfg = self.view_config or ViewConfig()
        params = self.diffusion_params or DiffusionParams(gamma=common_neighbor_ratio(g))
        if self.surrogate is not None and g.node_count >= self.surrogate_threshold:
            sur = self.surrogate
            if not hasattr(sur, "net_"):
                sur = sur.fit(g, params)
            return sur.view_metrics(g, cfg, self.random_state, params=params)
        return compute_view_metrics(g, params, cfg, self.random_state)

    def fit(self, g, y=None, metrics=None):
        check_graph(g)
        self.view_metrics_ = metrics if metrics is not None else self._metrics(g)
        self.history_ = []
        self.encoder_, self.projection_, self.embedding_ = train_gcl(
            g, self.view_metrics_, self.view_config or ViewConfig(), self.epochs, self.lr,
            self.tau, self.random_state, self.widths, self.proj_dim, self.history_)
        return self

    def transform(self, g):
        check_is_fitted(self, "encoder_")
        with torch.no_grad():
            return encode(g, self.encoder_).numpy()

    def fit_transform(self, g, y=None, **fit_params):
        return self.fit(g, y, **fit_params).embedding_
