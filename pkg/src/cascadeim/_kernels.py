"""Compiled cascade kernel.

Frontier-driven, so the cost of a rollout is proportional to the arcs it
touches. Random numbers use the same splitmix64 counter hashing as
:mod:`._rng`, addressed by ``(key, rollout, node, check index)``.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True)
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _uniform(key_hash, rollout, node, check):
    h = _mix(key_hash ^ _mix(np.uint64(rollout) + _GOLDEN))
    h = _mix(h ^ _mix(np.uint64(node) + _GOLDEN))
    h = _mix(h ^ _mix(np.uint64(check) + _GOLDEN))
    return np.float64(h >> np.uint64(11)) * 2.0 ** -53


@njit(cache=True)
def cascade_kernel(n, out_ptr, out_nbr, in_ptr, in_nbr, in_w, seeds, omega, log_keep,
                   sigmoid, max_rounds, key_hash, rollout_ids, active, exposures, act_round,
                   rounds_run):
    """Fill ``active``/``exposures``/``act_round`` (R, n) and ``rounds_run`` (R,) in place."""
    R = rollout_ids.shape[0]
    attempts = np.zeros(n, np.int64)
    checks = np.zeros(n, np.int64)
    touched = np.empty(n, np.int64)
    frontier = np.empty(n, np.int64)
    fired = np.empty(n, np.int64)
    for r in range(R):
        rid = rollout_ids[r]
        checks[:] = 0
        nf = 0
        for s in seeds:
            active[r, s] = True
            act_round[r, s] = 0
            frontier[nf] = s
            nf += 1
        for t in range(1, max_rounds + 1):
            nt = 0
            for a in range(nf):
                u = frontier[a]
                for e in range(out_ptr[u], out_ptr[u + 1]):
                    v = out_nbr[e]
                    if not active[r, v]:
                        if attempts[v] == 0:
                            touched[nt] = v
                            nt += 1
                        attempts[v] += 1
            if nt == 0:
                break
            rounds_run[r] = t
            nfire = 0
            for a in range(nt):
                v = touched[a]
                x = exposures[r, v] + attempts[v]
                exposures[r, v] = x
                attempts[v] = 0
                s = 0.0
                for e in range(in_ptr[v], in_ptr[v + 1]):
                    if active[r, in_nbr[e]]:
                        s += in_w[e]
                s = s * np.exp(log_keep * np.float64(x) ** omega[v])
                if sigmoid:
                    prob = 0.5 * (1.0 + np.tanh(0.5 * s))
                else:
                    prob = min(max(s, 0.0), 1.0)
                u01 = _uniform(key_hash, rid, v, checks[v])
                checks[v] += 1
                if u01 < prob:
                    fired[nfire] = v
                    nfire += 1
            for a in range(nfire):
                active[r, fired[a]] = True
                act_round[r, fired[a]] = t
                frontier[a] = fired[a]
            nf = nfire
            if nfire == 0:
                break
