"""Deep Q-learning seed selection over node embeddings.

The Q-network scores a candidate node ``u`` given the current seed set ``S``::

    Q(u, S) = theta1^T relu(theta2 [z_u ; mean(z_v : v in S)])

with a zero vector for the mean when ``S`` is empty. Episodes grow ``S`` from
empty to ``budget`` nodes; the reward of adding ``u`` is the Monte-Carlo
marginal spread divided by the node count, estimated with common random
numbers so an episode's return telescopes to ``spread(S_b) / n``.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._rng import child_seed
from .diffusion import estimate_spread
from .validation import check_budget, check_graph, top_k_indices

logger = logging.getLogger(__name__)

DTYPE = torch.float64

__all__ = [
    "QNet",
    "Transition",
    "ReplayBuffer",
    "TrainSchedule",
    "TrainingDiverged",
    "q_value",
    "q_values",
    "select_action",
    "reward",
    "n_step_target",
    "td_update",
    "sync_target",
    "train_policy",
    "select_seeds",
    "candidate_pool",
    "DDQNSeedSelector",
]


class TrainingDiverged(RuntimeError):
    pass


class QNet(torch.nn.Module):
    """``theta2`` maps ``[z_u ; state mean]`` (width 2d) to ``hidden``; ``theta1`` reads it out."""

    def __init__(self, dim, hidden=64, seed=0):
        super().__init__()
        torch.manual_seed(int(seed))
        self.dim = dim
        self.theta2 = torch.nn.Linear(2 * dim, hidden, bias=False, dtype=DTYPE)
        self.theta1 = torch.nn.Linear(hidden, 1, bias=False, dtype=DTYPE)

    def forward(self, z_u, s_bar):
        return self.theta1(torch.relu(self.theta2(torch.cat([z_u, s_bar], dim=-1)))).squeeze(-1)

    def all_nodes(self, Z, s_bar):
        """Q for every row of ``Z`` against one state mean (rows = nodes)."""
        W = self.theta2.weight
        pre = Z @ W[:, :self.dim].T + W[:, self.dim:] @ s_bar
        return torch.relu(pre) @ self.theta1.weight[0]


def _as_tensor(emb):
    return emb if isinstance(emb, torch.Tensor) else torch.as_tensor(np.asarray(emb), dtype=DTYPE)


def _state_mean(Z, state):
    if len(state) == 0:
        return torch.zeros(Z.shape[1], dtype=DTYPE)
    return Z[list(state)].mean(dim=0)


def q_value(u, state, emb, net):
    if u in set(state):
        raise ValueError(f"node {u} is already in the seed set")
    Z = _as_tensor(emb)
    with torch.no_grad():
        return float(net(Z[u], _state_mean(Z, state)))


def q_values(state, emb, net):
    """Q of every node for one state (entries for state members included)."""
    Z = _as_tensor(emb)
    with torch.no_grad():
        return net.all_nodes(Z, _state_mean(Z, state)).numpy()


def _candidates(node_count, state, pool=None):
    mask = np.zeros(node_count, dtype=bool)
    if pool is None:
        mask[:] = True
    else:
        mask[pool] = True
    mask[list(state)] = False
    return np.flatnonzero(mask)


def select_action(state, emb, net, epsilon, rng, pool=None):
    """Epsilon-greedy choice among nodes outside ``state`` (optionally within ``pool``)."""
    Z = _as_tensor(emb)
    cand = _candidates(Z.shape[0], state, pool)
    if len(cand) == 0:
        raise ValueError("no candidate nodes left")
    if rng.random() < epsilon:
        return int(cand[rng.integers(len(cand))])
    q = q_values(state, Z, net)[cand]
    return int(cand[top_k_indices(q, 1)[0]])


def reward(g, state, action, p, rollouts=64, rng_seed=0):
    """Normalised marginal spread of ``action`` using common random numbers."""
    if action in set(state):
        raise ValueError(f"node {action} is already in the seed set")
    base = estimate_spread(g, list(state), p, rollouts, rng_seed).mean if len(state) else 0.0
    new = estimate_spread(g, list(state) + [action], p, rollouts, rng_seed).mean
    return (new - base) / g.node_count


@dataclass(frozen=True)
class Transition:
    state: tuple
    action: int
    reward: float
    next_state: tuple
    terminal: bool

    def __post_init__(self):
        if self.action in self.state:
            raise ValueError("action must not already be in the state")
        if tuple(self.next_state) != tuple(self.state) + (self.action,):
            raise ValueError("next_state must equal state + (action,)")


def n_step_target(window, emb, target_net, rho, pool=None):
    """``sum_i rho^i r_{t+i} + rho^n max_v Q'(v, S_{t+n})``; no bootstrap past a terminal step.

    The max runs over the same action set as the policy (``pool`` if given).
    """
    if not window:
        raise ValueError("empty window")
    y = sum(rho ** i * tr.reward for i, tr in enumerate(window))
    last = window[-1]
    if last.terminal:
        return float(y)
    Z = _as_tensor(emb)
    cand = _candidates(Z.shape[0], last.next_state, pool)
    if len(cand) == 0:
        return float(y)
    boot = q_values(last.next_state, Z, target_net)[cand].max()
    return float(y + rho ** len(window) * boot)


def _batch_q(net, Z, windows):
    u = torch.as_tensor([w[0].action for w in windows], dtype=torch.long)
    s_bar = torch.stack([_state_mean(Z, w[0].state) for w in windows])
    return net(Z[u], s_bar)


def td_loss(net, windows, targets, emb):
    Z = _as_tensor(emb)
    y = torch.as_tensor(np.asarray(targets, dtype=np.float64), dtype=DTYPE)
    return torch.mean((y - _batch_q(net, Z, windows)) ** 2)


def td_update(net, windows, targets, emb, optimizer):
    """One gradient step on the mean squared TD error; returns the pre-step loss."""
    if len(windows) == 0:
        raise ValueError("empty batch")
    loss = td_loss(net, windows, targets, emb)
    if not torch.isfinite(loss):
        raise TrainingDiverged("non-finite TD loss")
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def sync_target(net, target_net):
    target_net.load_state_dict(copy.deepcopy(net.state_dict()))
    return target_net


class ReplayBuffer:
    """Fixed-capacity ring buffer of n-step windows with uniform sampling."""

    def __init__(self, capacity=10_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items = []
        self._next = 0

    def __len__(self):
        return len(self._items)

    def push(self, window):
        if len(self._items) < self.capacity:
            self._items.append(window)
        else:
            self._items[self._next] = window
        self._next = (self._next + 1) % self.capacity

    def sample_indices(self, size, rng):
        if not self._items:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, len(self._items), size=size)

    def sample(self, size, rng):
        return [self._items[i] for i in self.sample_indices(size, rng)]


@dataclass(frozen=True)
class TrainSchedule:
    episodes: int = 200
    budget: int = 10
    n_step: int = 3
    discount: float = 0.9
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay: float = 0.5            # fraction of episodes over which epsilon decays
    target_sync_every: int = 10
    batch_size: int = 64
    lr: float = 1e-3
    capacity: int = 10_000
    rollouts: int = 64
    updates_per_step: int = 1
    candidate_limit: int | None = None  # top-M by degree; None means every node
    hidden: int = 64
    eval_every: int | None = None       # greedy checkpoint evaluation cadence (episodes)

    def __post_init__(self):
        if self.episodes < 0 or self.budget < 1:
            raise ValueError("episodes must be >= 0 and budget >= 1")
        if not 1 <= self.n_step <= self.budget:
            raise ValueError("n_step must lie in [1, budget]")
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must lie in [0, 1]")
        if self.target_sync_every < 1:
            raise ValueError("target_sync_every must be >= 1")
        if self.eval_every is not None and self.eval_every < 1:
            raise ValueError("eval_every must be >= 1 or None")

    def epsilon(self, episode):
        span = max(1.0, self.eps_decay * self.episodes)
        frac = min(1.0, episode / span)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


def candidate_pool(g, limit):
    """Top-``limit`` nodes by total degree, sorted; None when every node is allowed."""
    if limit is None or limit >= g.node_count:
        return None
    return np.sort(top_k_indices(g.out_degree + g.in_degree, limit))


def train_policy(g, emb, schedule, p, rng_seed=0, history=None):
    """Train a Q-network by n-step DQN with replay and a periodically synced target.

    Deterministic given ``rng_seed``. ``history``, if a dict, receives the
    per-episode returns, the TD losses and the number of target syncs.

    With ``schedule.eval_every`` set, the greedy policy is scored every that
    many episodes by its mean spread over all prefixes (one fixed set of
    evaluation rollouts) and the best-scoring network is returned.
    """
    check_graph(g)
    check_budget(schedule.budget, g.node_count)
    Z = _as_tensor(emb)
    if Z.shape[0] != g.node_count:
        raise ValueError("embedding rows must match the node count")
    net = QNet(Z.shape[1], schedule.hidden, seed=rng_seed)
    target = sync_target(net, QNet(Z.shape[1], schedule.hidden, seed=rng_seed))
    opt = torch.optim.Adam(net.parameters(), lr=schedule.lr)
    buf = ReplayBuffer(schedule.capacity)
    rng = np.random.default_rng(rng_seed)
    pool = candidate_pool(g, schedule.candidate_limit)
    n, rho = schedule.n_step, schedule.discount
    syncs, returns, losses, scores = 0, [], [], []
    best_score, best_state = -np.inf, None
    eval_key = child_seed(rng_seed, -1, 0)

    for ep in range(schedule.episodes):
        eps = schedule.epsilon(ep)
        key = child_seed(rng_seed, ep)
        state, spread, steps = (), 0.0, []
        for t in range(schedule.budget):
            a = select_action(state, Z, net, eps, rng, pool)
            new = estimate_spread(g, list(state) + [a], p, schedule.rollouts, key).mean
            nxt = state + (a,)
            steps.append(Transition(state, a, (new - spread) / g.node_count, nxt,
                                    t == schedule.budget - 1))
            state, spread = nxt, new
            if len(steps) >= n:
                buf.push(tuple(steps[-n:]))
            for _ in range(schedule.updates_per_step):
                batch = buf.sample(schedule.batch_size, rng) if len(buf) else []
                if batch:
                    ys = [n_step_target(w, Z, target, rho, pool) for w in batch]
                    losses.append(td_update(net, batch, ys, Z, opt))
        # windows cut short by the end of the episode
        for start in range(max(0, len(steps) - n + 1), len(steps)):
            if len(steps) - start < n:
                buf.push(tuple(steps[start:]))
        returns.append(spread / g.node_count)
        if (ep + 1) % schedule.target_sync_every == 0:
            sync_target(net, target)
            syncs += 1
        if schedule.eval_every and (ep + 1) % schedule.eval_every == 0:
            chosen = select_seeds(g, Z, net, schedule.budget, pool)
            score = float(np.mean([
                estimate_spread(g, chosen[:t], p, schedule.rollouts, eval_key).mean
                for t in range(1, schedule.budget + 1)]))
            scores.append(score)
            if score > best_score:
                best_score, best_state = score, copy.deepcopy(net.state_dict())
    if best_state is not None:
        net.load_state_dict(best_state)
    if history is not None:
        history.update(returns=returns, losses=losses, syncs=syncs, eval_scores=scores)
    return net


def select_seeds(g, emb, net, budget, pool=None):
    """Greedy roll-out of the learned policy (epsilon = 0)."""
    check_budget(budget, g.node_count)
    Z = _as_tensor(emb)
    state = ()
    rng = np.random.default_rng(0)  # unused at epsilon 0
    for _ in range(budget):
        if pool is not None and len(_candidates(g.node_count, state, pool)) == 0:
            pool = None
        state = state + (select_action(state, Z, net, 0.0, rng, pool),)
    return list(state)


class DDQNSeedSelector(BaseEstimator):
    """Estimator wrapper: ``fit(X, g)`` trains on embeddings ``X``; ``select(b)`` picks seeds.

    A policy trained at ``budget`` serves any smaller budget through the
    prefix of its greedy roll-out.
    """

    def __init__(self, budget=10, episodes=200, hidden=64, n_step=3, discount=0.9,
                 eps_start=1.0, eps_end=0.05, eps_decay=0.5, target_sync_every=10,
                 batch_size=64, lr=1e-3, capacity=10_000, rollouts=64, updates_per_step=1,
                 candidate_limit=None, eval_every=None, diffusion_params=None, random_state=0):
        self.budget = budget
        self.episodes = episodes
        self.hidden = hidden
        self.n_step = n_step
        self.discount = discount
        self.eps_start = eps_start
        self.eps_end = eps_end
        self.eps_decay = eps_decay
        self.target_sync_every = target_sync_every
        self.batch_size = batch_size
        self.lr = lr
        self.capacity = capacity
        self.rollouts = rollouts
        self.updates_per_step = updates_per_step
        self.candidate_limit = candidate_limit
        self.eval_every = eval_every
        self.diffusion_params = diffusion_params
        self.random_state = random_state

    def schedule(self):
        return TrainSchedule(hidden=self.hidden, episodes=self.episodes, budget=self.budget,
                         n_step=min(self.n_step, self.budget), discount=self.discount,
                         eps_start=self.eps_start, eps_end=self.eps_end,
                         eps_decay=self.eps_decay, target_sync_every=self.target_sync_every,
                         batch_size=self.batch_size, lr=self.lr, capacity=self.capacity,
                         rollouts=self.rollouts, updates_per_step=self.updates_per_step,
                         candidate_limit=self.candidate_limit, eval_every=self.eval_every)

    def fit(self, X, g):
        from .diffusion import DiffusionParams
        from .graph import common_neighbor_ratio

        check_graph(g)
        p = self.diffusion_params or DiffusionParams(gamma=common_neighbor_ratio(g))
        self.embedding_ = np.asarray(X, dtype=np.float64)
        self.graph_ = g
        self.history_ = {}
        self.net_ = train_policy(g, self.embedding_, self.schedule(), p, self.random_state,
                                 self.history_)
        return self

    def select(self, budget=None):
        check_is_fitted(self, "net_")
        budget = self.budget if budget is None else budget
        return select_seeds(self.graph_, self.embedding_, self.net_, budget,
                            candidate_pool(self.graph_, self.candidate_limit))

    def predict(self, X=None):
        """Q-values of every node for the empty seed set."""
        check_is_fitted(self, "net_")
        return q_values((), self.embedding_ if X is None else X, self.net_)
