"""Synthetic flow traces with ground truth, and the packet CSV format.

A trace is stored compactly: one row of ``keys`` per distinct flow and a
``flow_ids`` vector giving, for every packet in arrival order, the row of the
flow it belongs to.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .filter_core import FLOWKEY_BITS, FlowKey, check_flow_key
from .hashing import pack_keys

HEADER = list(FlowKey._fields)


@dataclass(frozen=True)
class Constant:
    value: int = 1

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.full(n, self.value, dtype=np.int64)

    @property
    def bounds(self) -> tuple[int, int]:
        return self.value, self.value


@dataclass(frozen=True)
class UniformInt:
    lo: int
    hi: int

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.integers(self.lo, self.hi, size=n, endpoint=True, dtype=np.int64)

    @property
    def bounds(self) -> tuple[int, int]:
        return self.lo, self.hi


SizeDist = Union[Constant, UniformInt]


def parse_size_dist(text: str) -> SizeDist:
    """``const:N`` / ``N`` or ``uniform:LO:HI``."""
    parts = text.strip().split(":")
    try:
        if parts[0] in ("const", "constant") and len(parts) == 2:
            return Constant(int(parts[1]))
        if parts[0] == "uniform" and len(parts) == 3:
            return UniformInt(int(parts[1]), int(parts[2]))
        if len(parts) == 1:
            return Constant(int(parts[0]))
    except ValueError:
        pass
    raise ValueError(f"bad size distribution {text!r}; use const:N or uniform:LO:HI")


class Interleave(str, enum.Enum):
    SHUFFLED = "shuffled"
    ROUND_ROBIN_RANDOM = "roundrobin"


@dataclass(frozen=True)
class TrafficSpec:
    n_flows: int
    elephant_fraction: float = 0.0
    mice_size: SizeDist = Constant(1)
    elephant_size: SizeDist = UniformInt(20, 100)
    interleave: Interleave = Interleave.SHUFFLED
    seed: int = 0
    K: int = 20

    def __post_init__(self):
        object.__setattr__(self, "interleave", Interleave(self.interleave))
        if self.n_flows < 1:
            raise ValueError(f"n_flows must be >= 1, got {self.n_flows}")
        if not 0.0 <= self.elephant_fraction <= 1.0:
            raise ValueError(f"elephant_fraction must lie in [0, 1], got {self.elephant_fraction}")
        lo, hi = self.mice_size.bounds
        if self.n_mice and not (1 <= lo <= hi < self.K):
            raise ValueError(f"mice sizes must lie in [1, K={self.K}), got [{lo}, {hi}]")
        lo, hi = self.elephant_size.bounds
        if self.n_elephants and not (self.K <= lo <= hi):
            raise ValueError(f"elephant sizes must be >= K={self.K}, got [{lo}, {hi}]")

    @property
    def n_elephants(self) -> int:
        return int(np.floor(self.elephant_fraction * self.n_flows + 1e-9))

    @property
    def n_mice(self) -> int:
        return self.n_flows - self.n_elephants


@dataclass(frozen=True)
class FlowRecord:
    key: FlowKey
    size: int


@dataclass(frozen=True, eq=False)
class Trace:
    keys: np.ndarray
    flow_ids: np.ndarray
    K: int = 20
    sizes: np.ndarray = field(init=False)

    def __post_init__(self):
        keys = np.asarray(self.keys, dtype=np.int64).reshape(-1, 5)
        ids = np.asarray(self.flow_ids, dtype=np.int64)
        object.__setattr__(self, "keys", keys)
        object.__setattr__(self, "flow_ids", ids)
        object.__setattr__(self, "sizes", np.bincount(ids, minlength=len(keys)))

    def __len__(self) -> int:
        return len(self.flow_ids)

    @property
    def n_flows(self) -> int:
        return len(self.keys)

    @property
    def n_packets(self) -> int:
        return len(self.flow_ids)

    def key(self, i: int) -> FlowKey:
        return FlowKey(*map(int, self.keys[i]))

    @property
    def packets(self) -> list:
        keys = [self.key(i) for i in range(self.n_flows)]
        return [keys[i] for i in self.flow_ids.tolist()]

    @property
    def flows(self) -> list:
        return [FlowRecord(self.key(i), int(s)) for i, s in enumerate(self.sizes)]

    @property
    def elephant_mask(self) -> np.ndarray:
        return self.sizes >= self.K

    @property
    def truth(self) -> frozenset:
        return frozenset(self.key(i) for i in np.flatnonzero(self.elephant_mask))

    def elephant_packet_share(self) -> float:
        if not self.n_packets:
            return 0.0
        return float(self.sizes[self.elephant_mask].sum() / self.n_packets)

    def with_K(self, K: int) -> "Trace":
        return Trace(self.keys, self.flow_ids, K)


def random_keys(rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` distinct uniformly random 5-tuples as an ``(n, 5)`` array."""
    highs = np.array([1 << b for b in FLOWKEY_BITS], dtype=np.int64)
    keys = np.empty((0, 5), dtype=np.int64)
    while len(keys) < n:
        extra = rng.integers(0, highs, size=(n - len(keys), 5), dtype=np.int64)
        keys = np.concatenate([keys, extra])
        w0, w1 = pack_keys(keys)
        packed = np.stack([w0, w1], axis=1)
        _, first = np.unique(packed, axis=0, return_index=True)
        keys = keys[np.sort(first)]
    return keys


def _interleave(rng: np.random.Generator, sizes: np.ndarray, policy: Interleave) -> np.ndarray:
    ids = np.repeat(np.arange(len(sizes), dtype=np.int64), sizes)
    if policy is Interleave.SHUFFLED:
        return rng.permutation(ids)
    # Each alive flow emits at the jumps of its own rate-1 Poisson clock, so the
    # next packet always comes from a uniformly chosen still-alive flow.
    gaps = rng.exponential(size=len(ids))
    times = np.cumsum(gaps)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    offsets = np.concatenate([[0.0], times])[starts]
    times -= np.repeat(offsets, sizes)
    return ids[np.argsort(times, kind="stable")]


def generate_trace(spec: TrafficSpec) -> Trace:
    rng = np.random.default_rng(spec.seed)
    keys = random_keys(rng, spec.n_flows)
    sizes = np.empty(spec.n_flows, dtype=np.int64)
    order = rng.permutation(spec.n_flows)
    ele, mice = order[: spec.n_elephants], order[spec.n_elephants:]
    sizes[ele] = spec.elephant_size.sample(rng, len(ele))
    sizes[mice] = spec.mice_size.sample(rng, len(mice))
    return Trace(keys, _interleave(rng, sizes, spec.interleave), spec.K)


def read_trace_csv(path, K: int = 20) -> Trace:
    path = Path(path)
    rows: list = []
    index: dict = {}
    ids: list = []
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if lineno == 1 and [f.strip() for f in fields] == HEADER:
                continue
            try:
                key = check_flow_key(int(f) for f in fields)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            fid = index.get(key)
            if fid is None:
                fid = index[key] = len(rows)
                rows.append(key)
            ids.append(fid)
    return Trace(np.array(rows, dtype=np.int64).reshape(-1, 5), np.array(ids, dtype=np.int64), K)


def write_keys_csv(path, keys) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        w.writerows(keys)


def write_trace_csv(path, trace: Trace) -> None:
    write_keys_csv(path, trace.keys[trace.flow_ids].tolist())


def write_truth_csv(path, trace: Trace) -> None:
    write_keys_csv(path, trace.keys[trace.elephant_mask].tolist())


def read_keys_csv(path) -> list:
    """Keys from a truth/keys file in the trace CSV layout."""
    return read_trace_csv(path).packets
