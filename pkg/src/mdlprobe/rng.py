"""Deterministic pseudo-randomness for data generation, shuffling, and init.

All stochastic choices in the toolkit flow through a single splitmix64
generator so that datasets, splits, and training runs are bit-reproducible
across platforms and across implementations in other languages.

Stream contract (fixed; do not change without bumping the file format):
  * state transition: ``state += 0x9E3779B97F4A7C15`` (mod 2^64); output is
    the xor-shift-multiply finalizer of the new state with multipliers
    0xBF58476D1CE4E5B9 and 0x94D049BB133111EB and shifts 30/27/31.
  * splitmix64 is counter-based: output ``k`` (0-based) of the stream seeded
    with ``s`` equals ``finalize(s + (k+1)*GOLDEN)``, which is what the
    vectorized path exploits.
  * ``uniform`` maps a raw draw to ``((u >> 11) + 1) * 2**-53``, i.e. (0, 1].
  * Gaussians come from Box-Muller pairs: ``r = sqrt(-2 ln u1)``,
    ``(r cos(2 pi u2), r sin(2 pi u2))``; an odd request discards the second
    member of the last pair but still consumes both uniforms.
  * ``permutation`` is a descending Fisher-Yates with ``j = draw % (i+1)``
    (modulo bias is negligible for n << 2^64 and keeps the path integer-only).
"""

from __future__ import annotations

import math

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK = 0xFFFFFFFFFFFFFFFF

_TWO_NEG53 = 2.0 ** -53


def mix64(state: int) -> int:
    """Finalizer of splitmix64 applied to a 64-bit state (pure Python ints)."""
    z = state & _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Child seed = output `index` of the stream seeded with `seed`.

    Used to give sub-computations (per-step trainings, per-epoch shuffles,
    Monte-Carlo samples) independent deterministic streams.
    """
    return mix64((seed + (index + 1) * GOLDEN) & _MASK)


def _mix64_vec(states: np.ndarray) -> np.ndarray:
    z = states
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Stateful splitmix64 stream with vectorized bulk draws.

    The scalar and bulk paths produce one and the same sequence; bulk draws
    simply advance the counter by the number of raw outputs consumed.
    """

    def __init__(self, seed: int):
        self.seed = seed & _MASK
        self.counter = 0

    def next_u64(self) -> int:
        out = derive_seed(self.seed, self.counter)
        self.counter += 1
        return out

    def next_u64_array(self, count: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + count + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.seed) + idx * np.uint64(GOLDEN)
            out = _mix64_vec(states)
        self.counter += count
        return out

    def uniform(self) -> float:
        """One double in (0, 1]."""
        return ((self.next_u64() >> 11) + 1) * _TWO_NEG53

    def uniform_array(self, count: int) -> np.ndarray:
        raw = self.next_u64_array(count)
        return ((raw >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_NEG53

    def gaussian_array(self, count: int) -> np.ndarray:
        """`count` standard normals via Box-Muller on stream uniforms."""
        pairs = (count + 1) // 2
        u = self.uniform_array(2 * pairs)
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * math.pi) * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:count]

    def gaussian_matrix(self, rows: int, cols: int) -> np.ndarray:
        """Row-major matrix of standard normals."""
        return self.gaussian_array(rows * cols).reshape(rows, cols)

    def randint_below(self, bound: int) -> int:
        """Integer in [0, bound) via modulo reduction."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return self.next_u64() % bound

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of arange(n), high index down to 1."""
        perm = np.arange(n, dtype=np.int64)
        if n < 2:
            return perm
        # Raw draws precomputed in bulk; the swap loop itself is sequential.
        draws = self.next_u64_array(n - 1)
        p = perm.tolist()
        d = draws.tolist()
        for i in range(n - 1, 0, -1):
            j = d[n - 1 - i] % (i + 1)
            p[i], p[j] = p[j], p[i]
        return np.array(p, dtype=np.int64)
