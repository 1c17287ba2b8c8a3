"""Fluid limit of the single-filter d-choice counters under size-one mice.

The state is the vector of tail fractions ``T_k`` (fraction of counters
holding at least ``k``), ``T_0 = 1`` implicit.  Time is measured in arriving
packets per counter.  Between refreshes a packet lands on the smallest of
``d`` uniformly chosen counters, which promotes a value-``(k-1)`` counter to
``k`` at rate ``T_{k-1}^d - T_k^d``.  A refresh fires when ``T_1`` reaches
``r`` and shifts every tail down by one level.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class MeanFieldState:
    tails: np.ndarray  # T_1..T_kmax

    def __post_init__(self):
        object.__setattr__(self, "tails", np.asarray(self.tails, dtype=float).copy())

    @classmethod
    def zeros(cls, kmax: int) -> "MeanFieldState":
        return cls(np.zeros(kmax))

    @property
    def kmax(self) -> int:
        return len(self.tails)

    def tail(self, k: int) -> float:
        """``T_k`` with ``T_0 = 1`` and zero beyond the truncation."""
        if k <= 0:
            return 1.0
        if k > self.kmax:
            return 0.0
        return float(self.tails[k - 1])

    def is_monotone(self, atol: float = 1e-12) -> bool:
        full = np.concatenate([[1.0], self.tails])
        return bool(np.all(np.diff(full) <= atol) and full[-1] >= -atol)


class ConvergenceError(RuntimeError):
    def __init__(self, message, previous: MeanFieldState, last: MeanFieldState):
        super().__init__(message)
        self.previous = previous
        self.last = last


def supermarket_tail(rho: float, d: int, k: int) -> float:
    """Fixed-point tail ``rho ** ((d**k - 1) / (d - 1))`` of the supermarket
    model; ``rho ** k`` for ``d = 1``."""
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    if d < 1 or k < 0:
        raise ValueError(f"need d >= 1 and k >= 0, got d={d}, k={k}")
    if d == 1:
        return rho**k
    return rho ** ((d**k - 1) // (d - 1))


def _rates(tails: np.ndarray, d: int) -> np.ndarray:
    powered = tails**d
    return np.concatenate([[1.0], powered[:-1]]) - powered


def drift_step(state: MeanFieldState, d: int, dt: float) -> MeanFieldState:
    """One forward Euler step of length ``dt``."""
    return MeanFieldState(state.tails + dt * _rates(state.tails, d))


def refresh_shift(state: MeanFieldState) -> MeanFieldState:
    shifted = np.zeros_like(state.tails)
    shifted[:-1] = state.tails[1:]
    return MeanFieldState(shifted)


def fill_to_trigger(tails: np.ndarray, d: int, r: float, dt: float, max_steps: int = 10**8):
    """Integrate until ``T_1`` reaches ``r``; return ``(tails, elapsed)``.

    The final step is shortened so that ``T_1`` lands on ``r``; ``T_1``
    evolves linearly within an Euler step so this is exact.
    """
    t = tails.copy()
    elapsed = 0.0
    for _ in range(max_steps):
        if t[0] >= r:
            return t, elapsed
        rate = _rates(t, d)
        if t[0] + dt * rate[0] >= r:
            h = (r - t[0]) / rate[0]
            t = t + h * rate
            t[0] = r
            return t, elapsed + h
        t = t + dt * rate
        elapsed += dt
    raise RuntimeError("T_1 never reached the refresh threshold")


def cycle_to_fixed_point(
    d: int = 2,
    r: float = 0.5,
    kmax: int = 20,
    dt: float = 1e-3,
    tol: float = 1e-8,
    max_cycles: int = 10_000,
):
    """Iterate fill/refresh cycles from the empty filter to a stationary profile.

    Returns ``(wbar, period)``: the pre-refresh tails once consecutive
    pre-refresh states agree within ``tol`` in sup norm, and the number of
    packets per counter between the last two refreshes.
    """
    if not 0.0 < r < 1.0:
        raise ValueError(f"r must lie in (0, 1), got {r}")
    if kmax < 1 or dt <= 0:
        raise ValueError("need kmax >= 1 and dt > 0")
    tails = np.zeros(kmax)
    previous = None
    period = 0.0
    for _ in range(max_cycles):
        tails, period = fill_to_trigger(tails, d, r, dt)
        if previous is not None and np.max(np.abs(tails - previous)) < tol:
            return MeanFieldState(tails), float(period)
        previous = tails
        tails = np.concatenate([tails[1:], [0.0]])
    raise ConvergenceError(
        f"no fixed point within {max_cycles} cycles (d={d}, r={r})",
        MeanFieldState(previous),
        MeanFieldState(tails),
    )


@dataclass(frozen=True)
class FalsePositiveBound:
    above: float  # T_{C+1}: counter strictly greater than C
    at_least: float  # T_C: counter has reached C


def false_positive_bound(wbar: MeanFieldState, C: int) -> FalsePositiveBound:
    if C < 0 or C + 1 > wbar.kmax:
        raise ValueError(f"C={C} needs kmax >= C+1, state has kmax={wbar.kmax}")
    return FalsePositiveBound(above=float(wbar.tail(C + 1)), at_least=float(wbar.tail(C)))


def write_wbar_csv(path, wbar: MeanFieldState, period: float) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "tail"])
        for k in range(wbar.kmax + 1):
            w.writerow([k, repr(float(wbar.tail(k)))])
        w.writerow(["period", repr(float(period))])


def read_wbar_csv(path):
    tails = []
    period = None
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "k":
                continue
            if row[0] == "period":
                period = float(row[1])
            elif int(row[0]) > 0:
                tails.append(float(row[1]))
    return MeanFieldState(np.array(tails)), period
