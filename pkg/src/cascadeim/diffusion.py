"""Exposure-aware cascade model, Monte-Carlo spread and exposure-response fitting.

The activation probability of an inactive node ``i`` that has been exposed
``x`` times while the in-neighbours ``A`` are active is::

    s = sum_{j in A} a_ij * (1 - gamma) ** (x ** omega_i)
    p = sigmoid(s)            if apply_sigmoid
    p = clip(s, 0, 1)         otherwise

Without the sigmoid and with a single exposure per attempt this reduces to the
closed form ``beta(x) = alpha * x * (1 - gamma) ** (x ** omega)`` used for
curve fitting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._kernels import cascade_kernel
from ._rng import hash_counters
from .validation import check_node_set

logger = logging.getLogger(__name__)

__all__ = [
    "DiffusionParams",
    "CascadeTrace",
    "SpreadEstimate",
    "FitResult",
    "FitError",
    "exposure_adjustment",
    "activation_probability",
    "closed_form_beta",
    "simulate_cascade",
    "simulate_batch",
    "estimate_spread",
    "fit_exposure_response",
    "ExposureResponseRegressor",
]

_MAX_BATCH_CELLS = 1 << 22


def _sigmoid(s):
    return 0.5 * (1.0 + np.tanh(0.5 * s))


@dataclass(frozen=True)
class DiffusionParams:
    """Parameters of the exposure-aware cascade.

    ``omega`` and ``alpha`` may be scalars or per-node arrays. ``max_rounds``
    of None means "number of nodes".
    """

    gamma: float = 0.0
    omega: float | np.ndarray = 1.0
    alpha: float | np.ndarray = 1.0
    max_rounds: int | None = None
    apply_sigmoid: bool = True

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma={self.gamma} must lie in [0, 1)")
        om = np.asarray(self.omega, dtype=np.float64)
        if not np.all(np.isfinite(om)) or np.any(om <= 0):
            raise ValueError("omega must be finite and positive")
        if np.any(np.asarray(self.alpha) <= 0):
            raise ValueError("alpha must be positive")
        if self.max_rounds is not None and self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")

    def omega_for(self, n):
        om = np.asarray(self.omega, dtype=np.float64)
        if om.ndim == 0:
            return np.full(n, float(om))
        if om.shape != (n,):
            raise ValueError(f"per-node omega has shape {om.shape}, expected ({n},)")
        return om

    def rounds_for(self, n):
        return max(1, n) if self.max_rounds is None else self.max_rounds


@dataclass(frozen=True)
class CascadeTrace:
    active: np.ndarray
    exposures: np.ndarray
    activation_round: np.ndarray   # -1 for never activated
    rounds_run: int

    @property
    def size(self):
        return int(self.active.sum())


@dataclass(frozen=True)
class SpreadEstimate:
    mean: float
    std_error: float
    rollouts: int


@dataclass(frozen=True)
class FitResult:
    alpha: float
    omega: float
    residual: float

    def predict(self, x, gamma):
        return closed_form_beta(x, self.alpha, gamma, self.omega)


class FitError(RuntimeError):
    pass


def exposure_adjustment(x, omega):
    """Power-law exposure factor ``x ** omega`` (x >= 1)."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 1):
        raise ValueError("exposure count must be >= 1")
    out = x ** omega
    return float(out) if out.ndim == 0 else out


def closed_form_beta(x, alpha, gamma, omega):
    """``alpha * x * (1 - gamma) ** (x ** omega)``; equals alpha*(1-gamma) at x=1."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 1):
        raise ValueError("exposure count must be >= 1")
    # power form keeps beta(1) == alpha * (1 - gamma) bit for bit
    out = alpha * x * (1.0 - gamma) ** (x ** omega)
    return float(out) if out.ndim == 0 else out


def activation_probability(i, exposures_x, active_in_neighbors, g, p):
    """Probability that node ``i`` activates at its current exposure count."""
    if exposures_x < 1:
        raise ValueError("exposure count must be >= 1")
    total = 0.0
    for j in active_in_neighbors:
        e = g.edge_index(int(j), int(i))
        if e < 0:
            raise ValueError(f"{j} is not an in-neighbour of {i}")
        total += g.weight[e]
    omega = p.omega_for(g.node_count)[i]
    s = total * (1.0 - p.gamma) ** (exposures_x ** omega)
    if p.apply_sigmoid:
        return float(_sigmoid(s))
    return float(min(max(s, 0.0), 1.0))


def simulate_batch(g, seeds, p, key, rollout_ids, *, record=False):
    """Run the round-synchronous cascade for several rollouts.

    Each round, every inactive node with newly active in-neighbours adds their
    count to its exposure counter and is checked once against the activation
    probability given all currently active in-neighbours. The uniform used for
    the ``c``-th check of node ``i`` in rollout ``r`` is addressed by
    ``(key, r, i, c)``, so outcomes do not depend on batching.

    Returns ``active`` (R, n) and, with ``record``, also exposures, activation
    rounds and the number of rounds run.
    """
    n = g.node_count
    seeds = check_node_set(seeds, n)
    rollout_ids = np.ascontiguousarray(rollout_ids, dtype=np.int64)
    R = len(rollout_ids)
    nb = g.neighbors
    active = np.zeros((R, n), dtype=bool)
    exposures = np.zeros((R, n), dtype=np.int64)
    act_round = np.full((R, n), -1, dtype=np.int64)
    rounds = np.zeros(R, dtype=np.int64)
    cascade_kernel(n, nb.out_ptr, nb.out_nbr, nb.in_ptr, nb.in_nbr,
                   np.ascontiguousarray(g.weight[nb.in_edge]), seeds,
                   np.ascontiguousarray(p.omega_for(n)), float(np.log1p(-p.gamma)),
                   bool(p.apply_sigmoid), int(p.rounds_for(n)),
                   np.uint64(hash_counters(key)), rollout_ids, active, exposures,
                   act_round, rounds)
    if record:
        return active, exposures, act_round, int(rounds.max(initial=0))
    return active


def simulate_cascade(g, seeds, p, rng_seed=0):
    """One cascade realisation; identical to rollout 0 of :func:`estimate_spread`."""
    seeds = check_node_set(seeds, g.node_count, allow_empty=False)
    active, exp_, rnd, rounds = simulate_batch(g, seeds, p, rng_seed, [0], record=True)
    return CascadeTrace(active=active[0], exposures=exp_[0],
                        activation_round=rnd[0], rounds_run=rounds)


def rollout_sizes(g, seeds, p, rollouts, rng_seed=0):
    """Cascade sizes of rollouts ``0..rollouts-1`` under key ``rng_seed``."""
    if rollouts < 1:
        raise ValueError("rollouts must be >= 1")
    seeds = check_node_set(seeds, g.node_count)
    n = max(g.node_count, 1)
    chunk = max(1, _MAX_BATCH_CELLS // n)
    sizes = np.empty(rollouts, dtype=np.int64)
    for lo in range(0, rollouts, chunk):
        ids = np.arange(lo, min(lo + chunk, rollouts))
        sizes[ids] = simulate_batch(g, seeds, p, rng_seed, ids).sum(axis=1)
    return sizes


def estimate_spread(g, seeds, p, rollouts=1000, rng_seed=0):
    """Monte-Carlo mean and standard error of the final active-set size."""
    sizes = rollout_sizes(g, seeds, p, rollouts, rng_seed)
    mean = float(sizes.sum()) / rollouts
    se = float(sizes.std(ddof=1) / np.sqrt(rollouts)) if rollouts > 1 else 0.0
    return SpreadEstimate(mean=mean, std_error=se, rollouts=rollouts)


# -- exposure-response fitting ----------------------------------------------

_OMEGA_GRID = np.round(np.arange(0.3, 1.5 + 1e-9, 0.1), 10)


def _profile(x, y, gamma, omega):
    """Least-squares alpha for fixed omega and its residual vector."""
    basis = x * np.exp(np.log1p(-gamma) * x ** omega)
    alpha = float(basis @ y / (basis @ basis))
    return alpha, alpha * basis - y


def fit_exposure_response(samples, gamma, omega_bounds=(0.05, 5.0)):
    """Fit ``(alpha, omega)`` of the closed-form curve to ``(x, beta_hat)`` samples.

    ``alpha`` enters linearly and is profiled out; ``omega`` is initialised on
    the grid 0.3..1.5 and refined by bounded trust-region least squares.
    """
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise FitError("samples must be (x, beta_hat) pairs")
    x, y = arr[:, 0], arr[:, 1]
    if len(np.unique(x)) < 3:
        raise FitError("need at least 3 distinct exposure counts")
    if np.any(x < 1) or np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise FitError("exposure counts must be >= 1 and beta_hat positive")
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")

    grid_sse = [np.sum(_profile(x, y, gamma, w)[1] ** 2) for w in _OMEGA_GRID]
    w0 = float(_OMEGA_GRID[int(np.argmin(grid_sse))])
    # residuals rescaled so the solver tolerances are relative to the data
    scale = float(np.max(np.abs(y)))
    sol = least_squares(lambda w: _profile(x, y, gamma, w[0])[1] / scale, [w0],
                        bounds=omega_bounds, xtol=1e-15, ftol=1e-15, gtol=1e-15,
                        method="trf")
    omega = float(sol.x[0])
    alpha, r = _profile(x, y, gamma, omega)
    if alpha <= 0:
        raise FitError("fit produced non-positive alpha")
    return FitResult(alpha=alpha, omega=omega, residual=float(r @ r))


class ExposureResponseRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_exposure_response`.

    ``X`` holds exposure counts (shape ``(n,)`` or ``(n, 1)``), ``y`` the
    observed activation rates.
    """

    def __init__(self, gamma=0.0):
        self.gamma = gamma

    def fit(self, X, y):
        x = np.asarray(X, dtype=np.float64).reshape(-1)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if len(x) != len(y):
            raise ValueError("X and y lengths differ")
        res = fit_exposure_response(np.column_stack([x, y]), self.gamma)
        self.alpha_, self.omega_, self.residual_ = res.alpha, res.omega, res.residual
        return self

    def predict(self, X):
        check_is_fitted(self, "alpha_")
        x = np.asarray(X, dtype=np.float64).reshape(-1)
        return np.asarray(closed_form_beta(x, self.alpha_, self.gamma, self.omega_)).reshape(-1)

    def peak_exposure(self, max_x=50):
        """Integer exposure count maximising the fitted curve."""
        check_is_fitted(self, "alpha_")
        xs = np.arange(1, max_x + 1)
        return int(xs[np.argmax(self.predict(xs))])
