"""Delay and memory evaluation of partition plans.

The objective is the sum over operators of the slowest device's
(compute + communication) time: compute delay is workload / device rate,
communication delay is charged per synchronized round as connection latency
plus the slowest sender's bytes over the shared bandwidth. Per-device peak
memory is resident weight bytes plus the largest single activation.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

from .cluster import ClusterSpec, DeviceSpec
from .errors import InvalidPlan
from .model_ir import OperatorKind, OperatorSpec, TensorShape

if TYPE_CHECKING:  # pragma: no cover - import cycle is runtime-only
    from .partitioner import PartitionPlan, Slice

__all__ = [
    "RoundKind",
    "CommRound",
    "CostReport",
    "ELEMENT_BYTES",
    "compute_workload",
    "full_workload",
    "compute_delay",
    "comm_delay",
    "memory_bytes",
    "slice_memory_bytes",
    "evaluate",
    "report_csv",
    "report_json",
]

# The memory/traffic model assumes single-precision activations and weights.
ELEMENT_BYTES = 4


class RoundKind(Enum):
    BROADCAST_CONCAT = "broadcast_concat"
    HALO_EXCHANGE = "halo_exchange"
    GATHER_TO_ONE = "gather_to_one"
    ALL_EXCHANGE_SUM = "all_exchange_sum"


@dataclass(frozen=True)
class CommRound:
    """One synchronized exchange phase, charged once per round.

    `after_operator` is the operator the round follows in data-flow order
    (0 means the model input). `per_device_send_bytes[j]` is what device j
    pushes onto the network during the round.
    """

    after_operator: int
    kind: RoundKind
    per_device_send_bytes: tuple[int, ...]

    def __post_init__(self):
        if any(b < 0 for b in self.per_device_send_bytes):
            raise InvalidPlan("round send bytes must be >= 0")


@dataclass(frozen=True)
class OperatorCost:
    operator_index: int
    compute_ms: float
    comm_ms: float


@dataclass(frozen=True)
class CostReport:
    per_operator: tuple[OperatorCost, ...]
    total_ms: float
    per_device_peak_bytes: tuple[int, ...]
    round_count: int


def full_workload(op: OperatorSpec, out_shape: TensorShape) -> int:
    """Unsliced workload: MACs for conv/fc, one op per output element otherwise."""
    if op.kind in (OperatorKind.CONV, OperatorKind.FULLY_CONNECTED):
        return (op.c_out * out_shape.height * out_shape.width
                * op.kernel_h * op.kernel_w * op.c_in)
    return out_shape.elements


def compute_workload(op: OperatorSpec, slc: "Slice", out_shape: TensorShape) -> int:
    """Workload of one slice; linear in the slice extent along its dimension."""
    from .partitioner import PartitionDim  # runtime import avoids a cycle

    if op.kind in (OperatorKind.CONV, OperatorKind.FULLY_CONNECTED):
        spatial = out_shape.height * out_shape.width
        kernel = op.kernel_h * op.kernel_w
        if slc.dim == PartitionDim.OC:
            return slc.extent * spatial * kernel * op.c_in
        if slc.dim == PartitionDim.IC:
            return op.c_out * spatial * kernel * slc.extent
        return op.c_out * slc.extent * out_shape.width * kernel * op.c_in
    # Pool / elementwise: one op per output element of the slice.
    if slc.dim == PartitionDim.H:
        return out_shape.channels * slc.extent * out_shape.width
    return slc.extent * out_shape.height * out_shape.width


def compute_delay(workload: int, device: DeviceSpec) -> float:
    return workload / device.compute


def comm_delay(round_: CommRound, cluster: ClusterSpec, serial_links: bool = False) -> float:
    """Round delay: connection setup plus the transfer phase.

    Default assumes parallel full-duplex links (round ends when the slowest
    sender finishes); `serial_links` serializes the medium instead.
    """
    bytes_ = (sum(round_.per_device_send_bytes) if serial_links
              else max(round_.per_device_send_bytes, default=0))
    return cluster.conn_latency + bytes_ / cluster.bandwidth


def slice_memory_bytes(op: OperatorSpec, dim, extent: int, device: int,
                       out_shape: TensorShape) -> tuple[int, int]:
    """(weight_bytes, activation_bytes) for a prospective slice.

    OC slices hold their share of the kernel and produce their share of the
    output. IC slices hold an input-channel strip of the kernel but
    materialize a full-shape partial sum (bias counted on device 0 only,
    which adds it exactly once before the exchange). H slices replicate the
    whole kernel and produce a row block.
    """
    from .partitioner import PartitionDim

    weightless = op.kind in (OperatorKind.POOL, OperatorKind.ELEMENTWISE)
    bias = op.c_out * ELEMENT_BYTES if op.has_bias else 0
    kernel = op.kernel_h * op.kernel_w * ELEMENT_BYTES

    if dim == PartitionDim.OC:
        weights = 0 if weightless else extent * op.c_in * kernel + (
            extent * ELEMENT_BYTES if op.has_bias else 0)
        acts = extent * out_shape.height * out_shape.width * ELEMENT_BYTES
        return weights, acts
    if dim == PartitionDim.IC:
        weights = 0 if weightless else op.c_out * extent * kernel + (
            bias if device == 0 else 0)
        acts = out_shape.elements * ELEMENT_BYTES if extent > 0 else 0
        return weights, acts
    # H dimension: full kernel wherever any rows are computed.
    weights = 0 if (weightless or extent == 0) else op.c_out * op.c_in * kernel + bias
    acts = out_shape.channels * extent * out_shape.width * ELEMENT_BYTES
    return weights, acts


def memory_bytes(op: OperatorSpec, slc: "Slice", shapes: list[TensorShape]) -> tuple[int, int]:
    return slice_memory_bytes(op, slc.dim, slc.extent, slc.device,
                              shapes[slc.operator_index - 1])


def _per_device_peaks(plan: "PartitionPlan") -> tuple[int, ...]:
    from .partitioner import Mirrored, Partitioned, Replicated

    m = plan.cluster.m
    weight_sum = [0] * m
    act_max = [0] * m
    for assignment in plan.assignments:
        if isinstance(assignment, Partitioned):
            for slc in assignment.slices:
                weight_sum[slc.device] += slc.weight_bytes
                act_max[slc.device] = max(act_max[slc.device], slc.activation_bytes)
        elif isinstance(assignment, Replicated):
            weight_sum[assignment.host] += assignment.weight_bytes
            act_max[assignment.host] = max(act_max[assignment.host],
                                           assignment.activation_bytes)
        elif isinstance(assignment, Mirrored):
            for j in range(m):
                act_max[j] = max(act_max[j], assignment.activation_bytes)
        else:  # pragma: no cover - plan construction guards this
            raise InvalidPlan(f"unknown assignment type {type(assignment)!r}")
    return tuple(w + a for w, a in zip(weight_sum, act_max))


def evaluate(plan: "PartitionPlan", serial_links: bool = False) -> CostReport:
    """Full cost report for a validated plan."""
    from .partitioner import Mirrored, Partitioned, Replicated, validate_plan

    report = validate_plan(plan)
    if not report.ok:
        raise InvalidPlan("; ".join(report.failures))

    cluster = plan.cluster
    comm_after: dict[int, float] = {}
    total_comm = 0.0
    for round_ in plan.rounds:
        delay = comm_delay(round_, cluster, serial_links=serial_links)
        comm_after[round_.after_operator] = comm_after.get(round_.after_operator, 0.0) + delay
        total_comm += delay

    rows = []
    total_compute = 0.0
    for op, assignment in zip(plan.model.operators, plan.assignments):
        out_shape = plan.shapes[op.index - 1]
        if isinstance(assignment, Partitioned):
            worst = max(
                compute_delay(compute_workload(op, slc, out_shape), cluster.devices[slc.device])
                for slc in assignment.slices
            )
        elif isinstance(assignment, Replicated):
            worst = compute_delay(full_workload(op, out_shape),
                                  cluster.devices[assignment.host])
        elif isinstance(assignment, Mirrored):
            work = full_workload(op, out_shape)
            worst = max(compute_delay(work, dev) for dev in cluster.devices)
        else:  # pragma: no cover
            raise InvalidPlan(f"unknown assignment type {type(assignment)!r}")
        rows.append(OperatorCost(op.index, worst, comm_after.get(op.index, 0.0)))
        total_compute += worst

    return CostReport(
        per_operator=tuple(rows),
        total_ms=total_compute + total_comm,
        per_device_peak_bytes=_per_device_peaks(plan),
        round_count=len(plan.rounds),
    )


def report_csv(plan: "PartitionPlan", report: CostReport) -> str:
    """Per-operator cost table (operator, dim, t_compute_ms, t_comm_ms, cumulative_ms)."""
    from .partitioner import Mirrored, Partitioned, Replicated

    lines = ["operator,dim,t_compute_ms,t_comm_ms,cumulative_ms"]
    cumulative = 0.0
    for row, assignment in zip(report.per_operator, plan.assignments):
        if isinstance(assignment, Partitioned):
            dim = assignment.dim.name
        elif isinstance(assignment, Replicated):
            dim = "replicated"
        else:
            dim = "mirrored"
        cumulative += row.compute_ms + row.comm_ms
        lines.append(f"{row.operator_index},{dim},{row.compute_ms:.6f},"
                     f"{row.comm_ms:.6f},{cumulative:.6f}")
    return "\n".join(lines) + "\n"


def report_json(report: CostReport) -> dict:
    return {
        "total_ms": report.total_ms,
        "round_count": report.round_count,
        "per_device_peak_bytes": list(report.per_device_peak_bytes),
    }
