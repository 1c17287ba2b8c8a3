"""Scoring detections against ground truth, refresh-gap statistics, r sweeps."""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .filter_core import DetectionEvent, Filter, FilterConfig, FilterStats, Variant
from .meanfield import cycle_to_fixed_point, false_positive_bound
from .traffic import Trace

DEFAULT_BURN_IN = 3


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def n_flows(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def fpr(self) -> float:
        mice = self.fp + self.tn
        return self.fp / mice if mice else 0.0

    @property
    def fnr(self) -> float:
        elephants = self.tp + self.fn
        return self.fn / elephants if elephants else 0.0

    def as_row(self) -> dict:
        return dict(tp=self.tp, fp=self.fp, fn=self.fn, tn=self.tn, fpr=self.fpr, fnr=self.fnr)


def evaluate(detections: Iterable, truth, n_flows: int) -> ConfusionCounts:
    """Score a detection stream; events are deduplicated by flow key.

    ``detections`` may hold :class:`DetectionEvent` objects or bare keys.
    """
    truth = set(truth)
    if n_flows < len(truth):
        raise ValueError(f"n_flows={n_flows} is smaller than the {len(truth)} true elephants")
    flagged = {ev.key if isinstance(ev, DetectionEvent) else tuple(ev) for ev in detections}
    tp = len(flagged & truth)
    fp = len(flagged - truth)
    fn = len(truth) - tp
    tn = n_flows - tp - fp - fn
    if tn < 0:
        raise ValueError("more distinct flows flagged than exist in the trace")
    return ConfusionCounts(tp, fp, fn, tn)


@dataclass(frozen=True)
class GapStats:
    mean: float
    stddev: float
    cv: float


def refresh_gaps(stats: FilterStats, burn_in_refreshes: int = DEFAULT_BURN_IN) -> np.ndarray:
    idx = np.asarray(stats.refresh_packet_indices[burn_in_refreshes:], dtype=np.int64)
    return np.diff(idx)


def refresh_interval_stats(stats: FilterStats, burn_in_refreshes: int = DEFAULT_BURN_IN) -> GapStats:
    """Mean, population std and coefficient of variation of the packet gaps
    between consecutive refreshes, ignoring the first ``burn_in_refreshes``."""
    if stats.refresh_count <= burn_in_refreshes + 1:
        raise ValueError(
            f"{stats.refresh_count} refreshes leave no gap after a burn-in of {burn_in_refreshes}"
        )
    gaps = refresh_gaps(stats, burn_in_refreshes)
    mean = float(gaps.mean())
    std = float(gaps.std())
    return GapStats(mean, std, std / mean if mean else math.nan)


@dataclass(frozen=True)
class SweepRow:
    r: float
    fpr: float
    fnr: float
    mean_refresh_interval_packets: float
    fluid_fp_bound: float


SWEEP_HEADER = ["r", "fpr", "fnr", "mean_gap", "fluid_bound"]


def fluid_bound_for(config: FilterConfig, r: Optional[float] = None, dt: float = 1e-3) -> float:
    """``T_{C+1}`` of the d-choice fixed point at ``r`` for the config's
    per-counter threshold (``C`` for the single filter, ``K`` otherwise)."""
    r = config.r if r is None else r
    C = config.C
    wbar, _ = cycle_to_fixed_point(config.d, r, kmax=C + 10, dt=dt)
    return false_positive_bound(wbar, C).above


def run_filter(config: FilterConfig, trace: Trace):
    f = Filter(config)
    events = f.run(trace.keys, trace.flow_ids)
    return f, events


def score(trace: Trace, events) -> ConfusionCounts:
    return evaluate(events, trace.truth, trace.n_flows)


def sweep_r(base_config: FilterConfig, r_values: Sequence[float], trace: Trace,
            burn_in_refreshes: int = DEFAULT_BURN_IN) -> list:
    """One fresh filter per ``r`` on the same trace, joined with the fluid bound.

    The mean gap is NaN when a run refreshes too rarely to define it.
    """
    rows = []
    for r in r_values:
        config = dataclasses.replace(base_config, r=r)
        f, events = run_filter(config, trace)
        cc = score(trace, events)
        try:
            gap = refresh_interval_stats(f.stats, burn_in_refreshes).mean
        except ValueError:
            gap = math.nan
        rows.append(SweepRow(r, cc.fpr, cc.fnr, gap, fluid_bound_for(config)))
    return rows


def average_rows(runs: Sequence[Sequence[SweepRow]]) -> list:
    """Component-wise mean of several sweeps over the same r grid."""
    out = []
    for rows in zip(*runs):
        gaps = [row.mean_refresh_interval_packets for row in rows]
        finite = [g for g in gaps if not math.isnan(g)]
        out.append(SweepRow(
            rows[0].r,
            float(np.mean([row.fpr for row in rows])),
            float(np.mean([row.fnr for row in rows])),
            float(np.mean(finite)) if finite else math.nan,
            rows[0].fluid_fp_bound,
        ))
    return out


def write_sweep_csv(path, rows: Sequence[SweepRow]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for row in rows:
            w.writerow([row.r, row.fpr, row.fnr, row.mean_refresh_interval_packets, row.fluid_fp_bound])


def write_confusion_csv(path, counts: ConfusionCounts) -> None:
    row = counts.as_row()
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(row))
        w.writerow(list(row.values()))


def write_gaps_csv(path, stats: FilterStats) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["refresh", "packet_index", "gap"])
        prev = None
        for i, idx in enumerate(stats.refresh_packet_indices):
            w.writerow([i, idx, "" if prev is None else idx - prev])
            prev = idx


def variant_label(config: FilterConfig) -> str:
    return "A" if config.variant is Variant.MULTI_STAGE else "B"
