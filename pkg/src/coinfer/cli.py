"""Command-line front end.

Subcommands: compare (strategy table), sweep (latency vs connection
latency), verify (numerical equivalence), segment (pairing display),
show-plan (plan document). Exit codes: 0 ok, 1 usage/parse error,
2 infeasible plan, 3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass

from . import cluster as cluster_mod
from .cluster import ClusterSpec, default_cluster, load_cluster
from .cost_model import CostReport, evaluate, report_json
from .errors import (
    CoinferError,
    InfeasibleMemory,
    PairingError,
    ParseError,
    ShapeError,
    TooLarge,
    UnknownModel,
    ValidationError,
)
from .executor import check_equivalence
from .model_ir import ModelSpec, load_model, model_zoo
from .partitioner import PartitionPlan, Segmentation, plan_coedge, plan_iop, plan_oc, plan_to_doc
from .segmenter import EXHAUSTIVE_RAIL, exhaustive_segment, greedy_segment

STRATEGIES = ("oc", "coedge", "iop")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_VERIFY_FAILED = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", help="zoo model name (lenet, alexnet, vgg11/13/16/19)")
    parser.add_argument("--model-file", help="path to a model document")
    parser.add_argument("--input-hw", type=int, default=None,
                        help="override the zoo model's spatial input size")
    parser.add_argument("--cluster-file", help="path to a cluster document")
    parser.add_argument("--devices", type=int, default=cluster_mod.DEFAULT_DEVICES,
                        help="homogeneous device count (ignored with --cluster-file)")
    parser.add_argument("--compute", type=float, default=cluster_mod.DEFAULT_COMPUTE,
                        help="per-device compute rate, MAC/ms")
    parser.add_argument("--memory", type=float, default=cluster_mod.DEFAULT_MEMORY,
                        help="per-device memory, bytes")
    parser.add_argument("--bandwidth", type=float, default=cluster_mod.DEFAULT_BANDWIDTH,
                        help="shared link bandwidth, bytes/ms")
    parser.add_argument("--conn-latency", type=float,
                        default=cluster_mod.DEFAULT_CONN_LATENCY,
                        help="per-round connection latency, ms")
    parser.add_argument("--baseline", choices=("coedge", "oc"), default="coedge",
                        help="greedy pairing comparator")
    parser.add_argument("--serial-links", action="store_true",
                        help="serialize the medium instead of parallel links")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--out", help="write the command's CSV/JSON output here")


def _resolve_model(args) -> ModelSpec:
    if args.model_file:
        with open(args.model_file, "r", encoding="utf-8") as handle:
            return load_model(handle.read())
    if args.model:
        return model_zoo(args.model, input_hw=args.input_hw)
    raise ValidationError("one of --model or --model-file is required")


def _resolve_cluster(args) -> ClusterSpec:
    if args.cluster_file:
        with open(args.cluster_file, "r", encoding="utf-8") as handle:
            base = load_cluster(handle.read())
        return base
    if args.devices < 1:
        raise ValidationError("--devices must be >= 1")
    return ClusterSpec.homogeneous(args.devices, compute=args.compute,
                                   memory=args.memory, bandwidth=args.bandwidth,
                                   conn_latency=args.conn_latency)


def _build_plan(strategy: str, model: ModelSpec, cluster: ClusterSpec,
                baseline: str) -> tuple[PartitionPlan, Segmentation | None]:
    if strategy == "oc":
        return plan_oc(model, cluster), None
    if strategy == "coedge":
        return plan_coedge(model, cluster), None
    segmentation = greedy_segment(model, cluster, baseline=baseline)
    return plan_iop(model, cluster, segmentation), segmentation


def _write_out(path: str | None, text: str) -> None:
    if path:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------

def cmd_compare(args) -> int:
    model = _resolve_model(args)
    cluster = _resolve_cluster(args)
    reports: dict[str, CostReport] = {}
    segmentation = None
    for strategy in STRATEGIES:
        plan, seg = _build_plan(strategy, model, cluster, args.baseline)
        reports[strategy] = evaluate(plan, serial_links=args.serial_links)
        if seg is not None:
            segmentation = seg

    print(f"model={model.name} devices={cluster.m} bandwidth={cluster.bandwidth:g} "
          f"conn_latency={cluster.conn_latency:g}")
    print(f"{'strategy':<9} {'total_ms':>12} {'rounds':>7} {'max_peak_bytes':>15}")
    for strategy in STRATEGIES:
        rep = reports[strategy]
        print(f"{strategy:<9} {rep.total_ms:>12.4f} {rep.round_count:>7} "
              f"{max(rep.per_device_peak_bytes):>15,}")
    if segmentation is not None:
        print(f"iop segmentation: {segmentation.describe()}")
    for base in ("oc", "coedge"):
        saving = (reports[base].total_ms - reports["iop"].total_ms) / reports[base].total_ms
        print(f"iop saves {saving * 100:.2f}% vs {base}")

    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["model", "strategy", "total_ms", "round_count",
                     "max_peak_bytes", "peak_bytes_per_device"])
    for strategy in STRATEGIES:
        rep = reports[strategy]
        writer.writerow([model.name, strategy, f"{rep.total_ms:.6f}", rep.round_count,
                         max(rep.per_device_peak_bytes),
                         ";".join(str(b) for b in rep.per_device_peak_bytes)])
    if args.out:
        _write_out(args.out, buffer.getvalue())
    if args.json:
        payload = {strategy: report_json(reports[strategy]) for strategy in STRATEGIES}
        with open(args.json, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=2)
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def cmd_sweep(args) -> int:
    model = _resolve_model(args)
    base_cluster = _resolve_cluster(args)
    if args.l_step <= 0 or args.l_start > args.l_end:
        raise ValidationError("sweep range requires l_start <= l_end and l_step > 0")

    points = []
    latency = args.l_start
    while latency <= args.l_end + 1e-9:
        points.append(round(latency, 9))
        latency += args.l_step

    rows = []
    for point in points:
        cluster = ClusterSpec(base_cluster.devices, base_cluster.bandwidth, point)
        totals = {}
        for strategy in STRATEGIES:
            plan, _ = _build_plan(strategy, model, cluster, args.baseline)
            totals[strategy] = evaluate(plan, serial_links=args.serial_links).total_ms
        save_oc = (totals["oc"] - totals["iop"]) / totals["oc"] * 100
        save_co = (totals["coedge"] - totals["iop"]) / totals["coedge"] * 100
        for strategy in STRATEGIES:
            rows.append([model.name, strategy, f"{point:g}", f"{totals[strategy]:.6f}",
                         f"{save_oc:.2f}" if strategy == "iop" else "",
                         f"{save_co:.2f}" if strategy == "iop" else ""])

    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["model", "strategy", "conn_latency_ms", "total_ms",
                     "iop_saving_vs_oc_pct", "iop_saving_vs_coedge_pct"])
    writer.writerows(rows)
    _write_out(args.out, buffer.getvalue())
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def cmd_verify(args) -> int:
    model = _resolve_model(args)
    cluster = _resolve_cluster(args)
    plan, _ = _build_plan(args.strategy, model, cluster, args.baseline)
    report = check_equivalence(model, plan, trials=args.trials, seed=args.seed)
    print(f"strategy={args.strategy} model={model.name} devices={cluster.m} "
          f"trials={report.trials}")
    print(f"max relative error: {report.max_rel_error:.3e} "
          f"(tolerance {report.tolerance:g})")
    print("verification PASSED" if report.passed else "verification FAILED")
    if args.out:
        _write_out(args.out, report.to_json())
    return EXIT_OK if report.passed else EXIT_VERIFY_FAILED


# ---------------------------------------------------------------------------
# segment
# ---------------------------------------------------------------------------

def cmd_segment(args) -> int:
    model = _resolve_model(args)
    cluster = _resolve_cluster(args)
    segmentation = greedy_segment(model, cluster, baseline=args.baseline)
    greedy_cost = evaluate(plan_iop(model, cluster, segmentation),
                           serial_links=args.serial_links).total_ms
    print(f"greedy segmentation: {segmentation.describe()}")
    print(f"greedy cost: {greedy_cost:.4f} ms")
    n_partitionable = sum(1 for op in model.operators if op.partitionable)
    if n_partitionable > args.exhaustive_limit:
        print(f"exhaustive search skipped: {n_partitionable} partitionable operators "
              f"exceed the limit of {args.exhaustive_limit}")
        return EXIT_OK
    best_seg, best_cost = exhaustive_segment(model, cluster)
    gap = (greedy_cost - best_cost) / best_cost * 100 if best_cost > 0 else 0.0
    print(f"exhaustive segmentation: {best_seg.describe()}")
    print(f"exhaustive cost: {best_cost:.4f} ms (greedy gap {gap:.2f}%)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# show-plan
# ---------------------------------------------------------------------------

def cmd_show_plan(args) -> int:
    model = _resolve_model(args)
    cluster = _resolve_cluster(args)
    plan, segmentation = _build_plan(args.strategy, model, cluster, args.baseline)
    if segmentation is not None:
        print(f"segmentation: {segmentation.describe()}", file=sys.stderr)
    _write_out(args.out, plan_to_doc(plan))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="coinfer",
                     description="Partition planning for cooperative CNN inference")
    sub = parser.add_subparsers(dest="command", required=True)

    compare = sub.add_parser("compare", help="cost all three strategies")
    _add_common(compare)
    compare.add_argument("--json", help="also write a JSON summary here")
    compare.set_defaults(func=cmd_compare)

    sweep = sub.add_parser("sweep", help="latency sweep over connection latency")
    _add_common(sweep)
    sweep.add_argument("--l-start", type=float, default=1.0)
    sweep.add_argument("--l-end", type=float, default=8.0)
    sweep.add_argument("--l-step", type=float, default=1.0)
    sweep.set_defaults(func=cmd_sweep)

    verify = sub.add_parser("verify", help="check partitioned == centralized")
    _add_common(verify)
    verify.add_argument("--strategy", choices=STRATEGIES, default="iop")
    verify.add_argument("--trials", type=int, default=10)
    verify.set_defaults(func=cmd_verify)

    segment = sub.add_parser("segment", help="show greedy pairing and oracle gap")
    _add_common(segment)
    segment.add_argument("--exhaustive-limit", type=int, default=EXHAUSTIVE_RAIL)
    segment.set_defaults(func=cmd_segment)

    show_plan = sub.add_parser("show-plan", help="emit the plan document")
    _add_common(show_plan)
    show_plan.add_argument("--strategy", choices=STRATEGIES, default="iop")
    show_plan.set_defaults(func=cmd_show_plan)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleMemory as exc:
        print(f"error: infeasible plan: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ParseError, ValidationError, UnknownModel, ShapeError, PairingError,
            TooLarge, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CoinferError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
