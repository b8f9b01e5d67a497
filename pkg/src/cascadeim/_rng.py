"""Counter-based random numbers.

Monte-Carlo rollouts are vectorised across many realisations at once, yet each
realisation must see the same random draws regardless of batch layout or
evaluation order. Hashing ``(key, counters...)`` with the splitmix64 finaliser
gives random-access uniforms with that property.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = (np.uint64(k) for k in (30, 27, 31, 11))


def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def hash_counters(key, *counters):
    """uint64 hash of an integer key and broadcastable integer counter arrays."""
    with np.errstate(over="ignore"):
        h = _mix(np.asarray(np.uint64(key % 2**64)) + _GOLDEN)
        for c in counters:
            c = np.asarray(c).astype(np.uint64)
            h = _mix(h ^ _mix(c + _GOLDEN))
    return h


def counter_uniform(key, *counters):
    """Uniform floats in [0, 1) addressed by ``(key, *counters)``."""
    return (hash_counters(key, *counters) >> _S11).astype(np.float64) * 2.0**-53


def child_seed(seed, *ids):
    """Deterministic 63-bit child seed derived from a parent seed and ids."""
    return int(hash_counters(seed, *[np.int64(i) for i in ids]) >> np.uint64(1))
