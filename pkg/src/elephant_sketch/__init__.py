"""Elephant-flow detection with counting filters and their mean-field model."""

from .filter_core import (
    DetectionEvent,
    Filter,
    FilterConfig,
    FilterStats,
    FlowKey,
    RefreshScope,
    Variant,
    new_filter,
)
from .hashing import HashFamily, index, make_hash_family
from .meanfield import (
    MeanFieldState,
    cycle_to_fixed_point,
    drift_step,
    false_positive_bound,
    refresh_shift,
    supermarket_tail,
)
from .metrics import ConfusionCounts, SweepRow, evaluate, refresh_interval_stats, sweep_r
from .traffic import Constant, Interleave, Trace, TrafficSpec, UniformInt, generate_trace, read_trace_csv

__version__ = "0.1.0"
