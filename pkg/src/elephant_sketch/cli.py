"""Command-line front end.

Subcommands: generate, detect, evaluate, meanfield, sweep, compare.  Every
subcommand accepts ``--config FILE`` holding ``key=value`` lines whose keys
are option names (``elephant-frac=0.1`` or ``elephant_frac=0.1``); explicit
flags override the file.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import metrics, traffic
from .filter_core import DetectionEvent, FilterConfig, FlowKey, RefreshScope, Variant, check_flow_key
from .meanfield import cycle_to_fixed_point, false_positive_bound, write_wbar_csv

DETECTION_HEADER = ["packet_index", *FlowKey._fields, "counter_value"]
STATS_HEADER = ["packets_seen", "refresh_count", "total_decrements"]
COMPARE_HEADER = [
    "variant", "d", "m", "total_counters", "tp", "fp", "fn", "tn", "fpr", "fnr",
    "refresh_count", "mean_gap", "conservation_ok",
]
VARIANTS = {"A": Variant.MULTI_STAGE, "B": Variant.SINGLE,
            "multistage": Variant.MULTI_STAGE, "single": Variant.SINGLE}


class UsageError(Exception):
    pass


def load_config_file(path) -> dict:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    values = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return values


def _apply_config(parser: argparse.ArgumentParser, values: dict) -> None:
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("help", "config"):
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                defaults[key] = action.type(raw)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
        else:
            defaults[key] = raw
        if action.required:
            action.required = False
    parser.set_defaults(**defaults)


# -- argument groups ----------------------------------------------------------

def _float_list(text: str) -> list:
    return [float(x) for x in text.split(",") if x.strip()]


def _add_filter_args(p: argparse.ArgumentParser, variant=True) -> None:
    g = p.add_argument_group("filter")
    if variant:
        g.add_argument("--variant", choices=sorted(VARIANTS), default="B",
                       help="A/multistage or B/single (default B)")
    g.add_argument("--d", type=int, default=2, help="hash functions")
    g.add_argument("--m", type=int, default=1 << 15, help="counters per array")
    g.add_argument("--K", type=int, default=20, help="elephant size threshold")
    g.add_argument("--r", type=float, default=0.5, help="refresh threshold")
    g.add_argument("--hash-seed", type=int, default=0)
    g.add_argument("--tie-seed", type=int, default=0)
    g.add_argument("--no-refresh", action="store_true")
    g.add_argument("--refresh-scope", choices=[s.value for s in RefreshScope], default="stage")


def _filter_config(args, **overrides) -> FilterConfig:
    fields = dict(
        variant=VARIANTS[getattr(args, "variant", "B")],
        d=args.d, m=args.m, K=args.K, r=args.r,
        hash_seed=args.hash_seed, tie_seed=args.tie_seed,
        refresh=not args.no_refresh, refresh_scope=args.refresh_scope,
    )
    fields.update(overrides)
    return FilterConfig(**fields)


def _replica_configs(config: FilterConfig, replicas: int) -> list:
    return [
        dataclasses.replace(config, hash_seed=config.hash_seed + i, tie_seed=config.tie_seed + i)
        for i in range(replicas)
    ]


def _map(fn, items, replicas: int) -> list:
    if replicas <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=replicas) as pool:
        return list(pool.map(fn, items))


# -- CSV helpers --------------------------------------------------------------

def write_detections_csv(path, events) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DETECTION_HEADER)
        for ev in events:
            w.writerow([ev.packet_index, *ev.key, ev.counter_value])


def read_detections_csv(path) -> list:
    events = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return events
        if header != DETECTION_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        for lineno, row in enumerate(reader, start=2):
            try:
                vals = [int(v) for v in row]
                events.append(DetectionEvent(check_flow_key(vals[1:6]), vals[0], vals[6]))
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return events


def write_stats_csv(path, stats) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATS_HEADER)
        w.writerow([stats.packets_seen, stats.refresh_count, stats.total_decrements])


def _write_rows(path, header, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- subcommands --------------------------------------------------------------

def cmd_generate(args) -> int:
    spec = traffic.TrafficSpec(
        n_flows=args.flows,
        elephant_fraction=args.elephant_frac,
        mice_size=traffic.parse_size_dist(args.mice),
        elephant_size=traffic.parse_size_dist(args.elephant),
        interleave=args.interleave,
        seed=args.seed,
        K=args.K,
    )
    trace = traffic.generate_trace(spec)
    out = Path(args.out)
    truth = Path(args.truth) if args.truth else out.with_name("truth.csv")
    traffic.write_trace_csv(out, trace)
    traffic.write_truth_csv(truth, trace)
    print(f"wrote {trace.n_packets} packets of {trace.n_flows} flows to {out}; "
          f"{len(trace.truth)} elephants to {truth}; "
          f"elephant packet share {trace.elephant_packet_share():.3f}")
    return 0


def cmd_detect(args) -> int:
    config = _filter_config(args)
    trace = traffic.read_trace_csv(args.trace, config.K)
    f, events = metrics.run_filter(config, trace)
    out = Path(args.out)
    stats_path = Path(args.stats) if args.stats else out.with_name("stats.csv")
    write_detections_csv(out, events)
    write_stats_csv(stats_path, f.stats)
    if args.gaps:
        metrics.write_gaps_csv(args.gaps, f.stats)
    if args.plot:
        from .plotting import plot_gaps

        plot_gaps(f.stats, args.plot)
    print(f"{len(events)} detections, {len({e.key for e in events})} distinct flows, "
          f"{f.stats.refresh_count} refreshes over {f.stats.packets_seen} packets")
    return 0


def cmd_evaluate(args) -> int:
    events = read_detections_csv(args.detections)
    truth = set(traffic.read_keys_csv(args.truth))
    if args.n_flows is not None:
        n_flows = args.n_flows
    elif args.trace:
        n_flows = traffic.read_trace_csv(args.trace).n_flows
    else:
        raise UsageError("evaluate needs --n-flows or --trace")
    counts = metrics.evaluate(events, truth, n_flows)
    if args.out:
        metrics.write_confusion_csv(args.out, counts)
    print(",".join(counts.as_row()))
    print(",".join(str(v) for v in counts.as_row().values()))
    return 0


def cmd_meanfield(args) -> int:
    kmax = args.kmax if args.kmax is not None else args.C + 10
    wbar, period = cycle_to_fixed_point(args.d, args.r, kmax, args.dt, args.tol, args.max_cycles)
    bound = false_positive_bound(wbar, args.C)
    if args.out:
        write_wbar_csv(args.out, wbar, period)
    if args.plot:
        from .plotting import plot_wbar

        plot_wbar(wbar, args.plot, d=args.d, rho=args.rho)
    print(f"period={period!r}")
    print(f"fp_bound_gt_C={bound.above!r}")
    print(f"fp_bound_ge_C={bound.at_least!r}")
    return 0


def _sweep_one(job):
    config, r_values, trace = job
    return metrics.sweep_r(config, r_values, trace)


def cmd_sweep(args) -> int:
    config = _filter_config(args)
    if not args.r_values or any(not 0 < r < 1 for r in args.r_values):
        raise UsageError("--r-values must be a comma list of values in (0, 1)")
    trace = traffic.read_trace_csv(args.trace, config.K)
    jobs = [(c, args.r_values, trace) for c in _replica_configs(config, args.replicas)]
    rows = metrics.average_rows(_map(_sweep_one, jobs, args.replicas))
    metrics.write_sweep_csv(args.out, rows)
    if args.plot:
        from .plotting import plot_sweep

        plot_sweep(rows, args.plot)
    for row in rows:
        print(f"r={row.r:g} fpr={row.fpr:.6f} fnr={row.fnr:.6f} "
              f"mean_gap={row.mean_refresh_interval_packets:.1f} fluid_bound={row.fluid_fp_bound:.3g}")
    return 0


def compare_row(config: FilterConfig, trace, check_every: int = 0) -> list:
    """One side-by-side row: score, refresh statistics and (for the single
    filter) the mass-conservation check, optionally repeated during the run."""
    from .filter_core import Filter

    f = Filter(config)
    conserved = [True]

    def check(flt):
        try:
            flt.check_invariants()
        except AssertionError:
            conserved[0] = False

    if check_every > 0:
        events = f.run(trace.keys, trace.flow_ids, on_packet=check, every=check_every)
    else:
        events = f.run(trace.keys, trace.flow_ids)
    check(f)
    cc = metrics.score(trace, events)
    try:
        gap = metrics.refresh_interval_stats(f.stats).mean
    except ValueError:
        gap = math.nan
    return [
        metrics.variant_label(config), config.d, config.m, config.total_counters,
        cc.tp, cc.fp, cc.fn, cc.tn, cc.fpr, cc.fnr, f.stats.refresh_count, gap,
        conserved[0] if config.variant is Variant.SINGLE else "",
    ]


def _compare_one(job):
    config, trace, check_every = job
    return compare_row(config, trace, check_every)


def compare_configs(base: FilterConfig):
    """Equal-memory pair: A with ``d`` stages of ``m`` versus B with ``d*m``."""
    a = dataclasses.replace(base, variant=Variant.MULTI_STAGE)
    b = dataclasses.replace(base, variant=Variant.SINGLE, m=base.d * base.m)
    return a, b


def cmd_compare(args) -> int:
    base = _filter_config(args, variant=Variant.MULTI_STAGE)
    trace = traffic.read_trace_csv(args.trace, base.K)
    jobs = []
    for cfg in _replica_configs(base, args.replicas):
        a, b = compare_configs(cfg)
        jobs += [(a, trace, args.check_every), (b, trace, args.check_every)]
    results = _map(_compare_one, jobs, args.replicas)
    rows = results if args.replicas <= 1 else _average_compare(results)
    _write_rows(args.out, COMPARE_HEADER, rows)
    for row in rows:
        print(" ".join(f"{k}={v}" for k, v in zip(COMPARE_HEADER, row)))
    return 0


def _average_compare(results: list) -> list:
    out = []
    for label in ("A", "B"):
        group = [row for row in results if row[0] == label]
        head = group[0][:4]
        numeric = [sum(row[i] for row in group) / len(group) for i in range(4, 12)]
        ok = group[0][12] if label == "A" else all(row[12] for row in group)
        out.append([*head, *numeric, ok])
    return out


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elephant-sketch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic trace and its ground truth")
    p.add_argument("--flows", type=int, required=True)
    p.add_argument("--elephant-frac", type=float, default=0.0)
    p.add_argument("--mice", default="const:1", help="const:N or uniform:LO:HI")
    p.add_argument("--elephant", default="uniform:20:100", help="const:N or uniform:LO:HI")
    p.add_argument("--interleave", choices=[i.value for i in traffic.Interleave], default="shuffled")
    p.add_argument("--K", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="trace.csv")
    p.add_argument("--truth", default=None, help="default: truth.csv next to --out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("detect", help="run a filter over a trace")
    p.add_argument("--trace", required=True)
    _add_filter_args(p)
    p.add_argument("--out", default="detections.csv")
    p.add_argument("--stats", default=None, help="default: stats.csv next to --out")
    p.add_argument("--gaps", default=None, help="optional refresh-gap series CSV")
    p.add_argument("--plot", default=None, help="optional refresh-gap figure (svg/png)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score detections against ground truth")
    p.add_argument("--detections", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--n-flows", type=int, default=None)
    p.add_argument("--trace", default=None, help="count flows from this trace instead")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("meanfield", help="fluid fixed point, period and false-positive bound")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--r", type=float, default=0.5)
    p.add_argument("--C", type=int, default=10)
    p.add_argument("--kmax", type=int, default=None, help="default C+10")
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-cycles", type=int, default=10_000)
    p.add_argument("--rho", type=float, default=None, help="overlay the supermarket tail at this load")
    p.add_argument("--out", default="wbar.csv")
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_meanfield)

    p = sub.add_parser("sweep", help="error rates against the refresh threshold")
    p.add_argument("--trace", required=True)
    _add_filter_args(p)
    p.add_argument("--r-values", type=_float_list, default=[0.3, 0.5, 0.7])
    p.add_argument("--replicas", type=int, default=1)
    p.add_argument("--out", default="sweep.csv")
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="multi-stage vs single filter at equal memory")
    p.add_argument("--trace", required=True)
    _add_filter_args(p, variant=False)
    p.add_argument("--replicas", type=int, default=1)
    p.add_argument("--check-every", type=int, default=10_000,
                   help="check invariants every N packets (0: at the end only)")
    p.add_argument("--out", default="compare.csv")
    p.set_defaults(func=cmd_compare)

    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sp in action.choices.values():
                sp.add_argument("--config", default=None, help="key=value defaults file")
    return parser


def _validate(args) -> None:
    for name in ("replicas",):
        if getattr(args, name, 1) < 1:
            raise UsageError(f"--{name} must be >= 1")


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        pre, _ = _pre_parse(argv)
        if pre.config:
            sub = _subparser(parser, argv)
            if sub is not None:
                _apply_config(sub, load_config_file(pre.config))
        args = parser.parse_args(argv)
        _validate(args)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 1


def _pre_parse(argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    return pre.parse_known_args(argv)


def _subparser(parser, argv):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for tok in argv:
                if tok in action.choices:
                    return action.choices[tok]
    return None


if __name__ == "__main__":
    sys.exit(main())
