"""Seeded 64-bit hash family mapping flow keys to counter indices.

Each function of the family is a splitmix64 finalizer chained over the two
64-bit words of a packed 5-tuple, keyed by its own seed and reduced modulo
``m``.  The scalar path (:func:`index`) and the vectorized path
(:func:`index_many`) produce identical results.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB


def splitmix64(z: int) -> int:
    """One splitmix64 output for state ``z`` (already advanced)."""
    z = ((z ^ (z >> 30)) * _MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _MUL2) & MASK64
    return z ^ (z >> 31)


def _mix(z: int) -> int:
    return splitmix64((z + _GOLDEN) & MASK64)


def pack_key(key: Sequence[int]) -> tuple[int, int]:
    """Pack ``(src, dst, sport, dport, proto)`` into two 64-bit words."""
    src, dst, sport, dport, proto = key
    return (src << 32) | dst, (sport << 24) | (dport << 8) | proto


@dataclass(frozen=True)
class HashFamily:
    seeds: tuple[int, ...]
    m: int

    @property
    def d(self) -> int:
        return len(self.seeds)


def make_hash_family(master_seed: int, d: int, m: int) -> HashFamily:
    if d < 1:
        raise ValueError(f"need at least one hash function, got d={d}")
    if m < 1:
        raise ValueError(f"need at least one counter, got m={m}")
    seeds: list[int] = []
    state = master_seed & MASK64
    while len(seeds) < d:
        state = (state + _GOLDEN) & MASK64
        s = splitmix64(state)
        if s not in seeds:
            seeds.append(s)
    return HashFamily(tuple(seeds), m)


def hash64(seed: int, key: Sequence[int]) -> int:
    w0, w1 = pack_key(key)
    h = _mix(seed ^ w0)
    return _mix(h ^ w1)


def index(family: HashFamily, stage: int, key: Sequence[int]) -> int:
    if not 0 <= stage < family.d:
        raise IndexError(f"stage {stage} out of range for d={family.d}")
    return hash64(family.seeds[stage], key) % family.m


def indices(family: HashFamily, key: Sequence[int]) -> tuple[int, ...]:
    """All ``d`` indices of ``key``, stage order."""
    w0, w1 = pack_key(key)
    m = family.m
    return tuple(_mix(_mix(s ^ w0) ^ w1) % m for s in family.seeds)


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = z + np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MUL1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MUL2)
    return z ^ (z >> np.uint64(31))


def pack_keys(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`pack_key` over an ``(n, 5)`` integer array."""
    k = np.asarray(keys, dtype=np.uint64).reshape(-1, 5)
    w0 = (k[:, 0] << np.uint64(32)) | k[:, 1]
    w1 = (k[:, 2] << np.uint64(24)) | (k[:, 3] << np.uint64(8)) | k[:, 4]
    return w0, w1


def index_many(family: HashFamily, stage: int, keys: np.ndarray) -> np.ndarray:
    """Indices of every row of an ``(n, 5)`` key array for one stage."""
    if not 0 <= stage < family.d:
        raise IndexError(f"stage {stage} out of range for d={family.d}")
    w0, w1 = pack_keys(keys)
    h = _mix_array(np.uint64(family.seeds[stage]) ^ w0)
    h = _mix_array(h ^ w1)
    return (h % np.uint64(family.m)).astype(np.int64)
