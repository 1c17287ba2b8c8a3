"""Counting filters for elephant detection with proportion-triggered refresh.

Two variants share the refresh rule (decrement every positive counter by one
once the fraction of non-null counters reaches ``r``):

* ``MULTI_STAGE``: ``d`` arrays of ``m`` counters, one per hash function.  A
  packet increments only the stage counters holding the minimum value
  (conservative update) and a flow is reported when that minimum reaches
  ``K``.
* ``SINGLE``: one array of ``m`` counters probed at ``d`` positions.  A packet
  increments exactly one counter, the smallest, ties broken by a seeded coin.
  A flow is reported when its smallest counter reaches ``C = K / d``.
"""

from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional

import numpy as np

from . import hashing


class FlowKey(NamedTuple):
    src_addr: int
    dst_addr: int
    src_port: int
    dst_port: int
    protocol: int


FLOWKEY_BITS = (32, 32, 16, 16, 8)


def check_flow_key(values: Iterable[int]) -> FlowKey:
    """Build a :class:`FlowKey`, rejecting fields outside their bit width."""
    vals = tuple(int(v) for v in values)
    if len(vals) != 5:
        raise ValueError(f"a flow key has 5 fields, got {len(vals)}")
    for name, v, bits in zip(FlowKey._fields, vals, FLOWKEY_BITS):
        if not 0 <= v < (1 << bits):
            raise ValueError(f"{name}={v} does not fit in {bits} bits")
    return FlowKey(*vals)


class Variant(str, enum.Enum):
    MULTI_STAGE = "multistage"
    SINGLE = "single"


class RefreshScope(str, enum.Enum):
    PER_STAGE = "stage"
    GLOBAL = "global"


@dataclass(frozen=True)
class FilterConfig:
    variant: Variant = Variant.SINGLE
    d: int = 2
    m: int = 1 << 15
    K: int = 20
    r: float = 0.5
    hash_seed: int = 0
    tie_seed: int = 0
    refresh: bool = True
    refresh_scope: RefreshScope = RefreshScope.PER_STAGE

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "refresh_scope", RefreshScope(self.refresh_scope))
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if not 0.0 < self.r < 1.0:
            raise ValueError(f"r must lie in (0, 1), got {self.r}")
        if self.variant is Variant.SINGLE and self.K % self.d:
            raise ValueError(f"d={self.d} does not divide K={self.K}")

    @property
    def C(self) -> int:
        """Per-counter detection threshold."""
        if self.variant is Variant.SINGLE:
            return self.K // self.d
        return self.K

    @property
    def n_arrays(self) -> int:
        return self.d if self.variant is Variant.MULTI_STAGE else 1

    @property
    def total_counters(self) -> int:
        return self.n_arrays * self.m


@dataclass(frozen=True)
class DetectionEvent:
    key: FlowKey
    packet_index: int
    counter_value: int


@dataclass
class FilterStats:
    packets_seen: int = 0
    refresh_count: int = 0
    refresh_packet_indices: list = field(default_factory=list)
    total_decrements: int = 0


def _trigger_count(r: float, m: int) -> int:
    """Smallest non-null count ``n`` with ``n / m >= r``."""
    n = math.ceil(r * m)
    while n > 0 and (n - 1) / m >= r:
        n -= 1
    while n / m < r:
        n += 1
    return n


class CounterBank:
    """``n_arrays`` arrays of ``m`` counters with maintained non-null counts."""

    def __init__(self, n_arrays: int, m: int):
        self.m = m
        self.arrays = [[0] * m for _ in range(n_arrays)]
        self.nonnull = [0] * n_arrays

    def load(self, arrays) -> None:
        arrays = [list(map(int, a)) for a in arrays]
        if len(arrays) != len(self.arrays) or any(len(a) != self.m for a in arrays):
            raise ValueError("counter arrays do not match the bank shape")
        if any(v < 0 for a in arrays for v in a):
            raise ValueError("counters must be nonnegative")
        self.arrays = arrays
        self.nonnull = [self.m - a.count(0) for a in arrays]

    def check(self) -> None:
        """Recount non-null counters and verify the maintained values."""
        for j, a in enumerate(self.arrays):
            actual = self.m - a.count(0)
            if actual != self.nonnull[j]:
                raise AssertionError(
                    f"array {j}: maintained nonnull={self.nonnull[j]}, actual={actual}"
                )
            if min(a) < 0:
                raise AssertionError(f"array {j} holds a negative counter")

    def total(self) -> int:
        return sum(sum(a) for a in self.arrays)

    def decrement(self, j: int) -> int:
        """Decrement every positive counter of array ``j``; return how many."""
        a = self.arrays[j]
        dec = self.nonnull[j]
        new = [v - 1 if v else 0 for v in a]
        self.arrays[j] = new
        self.nonnull[j] = self.m - new.count(0)
        return dec


RefreshHook = Callable[["Filter", int], None]


class Filter:
    """A streaming elephant detector; see the module docstring for variants.

    ``pre_refresh_hook(filter, array)`` if set is called right before an
    array is decremented, which lets callers snapshot the pre-refresh state.
    """

    def __init__(self, config: FilterConfig):
        self.config = config
        self.family = hashing.make_hash_family(config.hash_seed, config.d, config.m)
        self.bank = CounterBank(config.n_arrays, config.m)
        self.stats = FilterStats()
        self.stage_refresh_counts = [0] * config.n_arrays
        self.pre_refresh_hook: Optional[RefreshHook] = None
        self._rng = random.Random(config.tie_seed)
        self._threshold = config.C
        # Global scope compares the pooled proportion against r over d*m counters.
        if config.variant is Variant.MULTI_STAGE and config.refresh_scope is RefreshScope.GLOBAL:
            self._trigger = _trigger_count(config.r, config.total_counters)
        else:
            self._trigger = _trigger_count(config.r, config.m)

    # -- state access ---------------------------------------------------

    @property
    def counters(self) -> list:
        """Copy of the counter arrays (one list per array)."""
        return [list(a) for a in self.bank.arrays]

    def load_counters(self, arrays) -> None:
        self.bank.load(arrays)

    def indices(self, key) -> tuple:
        return hashing.indices(self.family, key)

    # -- per-packet update ----------------------------------------------

    def _pick(self, n: int) -> int:
        if n == 2:
            return self._rng.getrandbits(1)
        return self._rng.randrange(n)

    def _increment(self, idx) -> tuple:
        """Apply one packet at counter positions ``idx``.

        Returns ``(pre_min, post_min)`` over the flow's counters.
        """
        bank = self.bank
        if self.config.variant is Variant.SINGLE:
            c = bank.arrays[0]
            if len(idx) == 2:
                i0, i1 = idx
                a = c[i0]
                b = c[i1]
                if i0 == i1 or a < b:
                    j = i0
                elif b < a:
                    j = i1
                else:
                    j = i1 if self._pick(2) else i0
                pre = a if a < b else b
            else:
                distinct = list(dict.fromkeys(idx))
                pre = min(c[i] for i in distinct)
                cands = [i for i in distinct if c[i] == pre]
                j = cands[self._pick(len(cands))] if len(cands) > 1 else cands[0]
            old = c[j]
            c[j] = old + 1
            if old == 0:
                bank.nonnull[0] += 1
            post = min(c[i] for i in idx)
            return pre, post
        arrays = bank.arrays
        vals = [arrays[s][i] for s, i in enumerate(idx)]
        pre = min(vals)
        for s, v in enumerate(vals):
            if v == pre:
                arrays[s][idx[s]] = v + 1
                if v == 0:
                    bank.nonnull[s] += 1
        return pre, pre + 1

    def _step(self, idx) -> Optional[int]:
        """One packet: increment, then refresh check.  Returns the counter
        value if the flow just reached the detection threshold."""
        pre, post = self._increment(idx)
        self.stats.packets_seen += 1
        if self.config.refresh:
            self.maybe_refresh()
        # The multi-stage minimum always rises by one, so equality is a crossing;
        # the single-filter minimum may sit at the threshold across a tie.
        if post == self._threshold:
            return post
        return None

    def observe(self, key) -> Optional[DetectionEvent]:
        key = FlowKey(*key)
        value = self._step(hashing.indices(self.family, key))
        if value is None:
            return None
        return DetectionEvent(key, self.stats.packets_seen - 1, value)

    def maybe_refresh(self) -> bool:
        """Refresh every array whose non-null count has reached the trigger.

        At most one decrement pass per array per call.  The refresh is logged
        at the index of the last observed packet.
        """
        bank = self.bank
        trigger = self._trigger
        cfg = self.config
        if cfg.variant is Variant.MULTI_STAGE and cfg.refresh_scope is RefreshScope.GLOBAL:
            due = list(range(cfg.n_arrays)) if sum(bank.nonnull) >= trigger else []
        else:
            due = [j for j, n in enumerate(bank.nonnull) if n >= trigger]
        if not due:
            return False
        stats = self.stats
        for j in due:
            if self.pre_refresh_hook is not None:
                self.pre_refresh_hook(self, j)
            stats.total_decrements += bank.decrement(j)
            self.stage_refresh_counts[j] += 1
        stats.refresh_count += 1
        stats.refresh_packet_indices.append(stats.packets_seen - 1)
        return True

    # -- bulk processing --------------------------------------------------

    def flow_indices(self, keys: np.ndarray) -> list:
        """Per-row index tuples for an ``(n, 5)`` key array."""
        cols = [hashing.index_many(self.family, s, keys).tolist() for s in range(self.config.d)]
        return list(zip(*cols))

    def run(
        self,
        keys: np.ndarray,
        flow_ids: Iterable[int],
        on_packet: Optional[Callable[["Filter"], None]] = None,
        every: int = 1,
    ) -> list:
        """Feed packets given as row numbers into ``keys``; return detections.

        Equivalent to calling :meth:`observe` on each packet's key, with the
        hashes computed once per distinct flow.  ``on_packet(filter)`` runs
        after every ``every``-th packet.
        """
        keys = np.asarray(keys)
        flow_idx = self.flow_indices(keys)
        if isinstance(flow_ids, np.ndarray):
            flow_ids = flow_ids.tolist()
        events = []
        step = self._step
        stats = self.stats
        for n, fid in enumerate(flow_ids, start=1):
            value = step(flow_idx[fid])
            if value is not None:
                key = FlowKey(*map(int, keys[fid]))
                events.append(DetectionEvent(key, stats.packets_seen - 1, value))
            if on_packet is not None and n % every == 0:
                on_packet(self)
        return events

    # -- queries ----------------------------------------------------------

    def estimate_size(self, key) -> int:
        idx = hashing.indices(self.family, key)
        arrays = self.bank.arrays
        if self.config.variant is Variant.SINGLE:
            return min(arrays[0][i] for i in idx)
        return min(arrays[s][i] for s, i in enumerate(idx))

    def snapshot_tails(self):
        """Tail fractions ``T_k`` for ``k = 0..max``; one vector per stage for
        the multi-stage variant, a single vector otherwise."""
        tails = [tail_fractions(a) for a in self.bank.arrays]
        if self.config.variant is Variant.SINGLE:
            return tails[0]
        return tails

    def check_invariants(self) -> None:
        self.bank.check()
        if self.config.variant is Variant.SINGLE:
            total = self.bank.total() + self.stats.total_decrements
            if total != self.stats.packets_seen:
                raise AssertionError(
                    f"counter mass {total} != packets seen {self.stats.packets_seen}"
                )


def new_filter(config: FilterConfig) -> Filter:
    return Filter(config)


def tail_fractions(counters) -> list:
    """``T_k = #{c >= k} / m`` for ``k = 0..max(counters)``."""
    arr = np.asarray(counters, dtype=np.int64)
    hist = np.bincount(arr)
    tails = np.cumsum(hist[::-1])[::-1] / arr.size
    return tails.tolist()
