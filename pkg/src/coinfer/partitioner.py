"""Partition plan construction and validation.

Three strategies over a sequential CNN:

* ``plan_oc``     - every conv/fc is split by output channels; pool/ReLU
  stay on their producer's channel slices; each such group ends in a
  broadcast-and-concat round that rebuilds the full activation everywhere.
* ``plan_coedge`` - the conv stage is split by feature-map rows with
  need-based halo exchange at operator boundaries; the fully-connected
  stage is not partitioned (it runs entirely on device 0 after one gather).
* ``plan_iop``    - pairs of consecutive conv/fc operators are interleaved:
  the first is split by output channels, the second by input channels with
  per-device extents identical to the first's, so the intermediate
  activation never moves. The pair closes with a single
  all-exchange-and-sum round of full-shape partial sums, replacing the two
  broadcast rounds the plain output-channel strategy would need.

After the final operator, every strategy consolidates the result on
device 0 (the gather degenerates to nothing when the data already lives
there). Plans are immutable and evaluated by :mod:`coinfer.cost_model`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Union

from .cluster import ClusterSpec, proportional_split
from .cost_model import ELEMENT_BYTES, CommRound, RoundKind, slice_memory_bytes
from .errors import InfeasibleMemory, PairingError, ParseError, ValidationError
from .model_ir import ModelSpec, OperatorKind, OperatorSpec, TensorShape, infer_shapes

__all__ = [
    "PartitionDim",
    "Slice",
    "Partitioned",
    "Replicated",
    "Mirrored",
    "Assignment",
    "Segment",
    "Segmentation",
    "PartitionPlan",
    "ConstraintCheck",
    "ValidationReport",
    "partitionable_indices",
    "local_groups",
    "pair_legal",
    "h_row_ranges",
    "needed_input_rows",
    "halo_transfers",
    "plan_oc",
    "plan_coedge",
    "plan_iop",
    "validate_plan",
    "plan_to_doc",
    "plan_from_doc",
]


class PartitionDim(Enum):
    H = "H"
    IC = "IC"
    OC = "OC"


@dataclass(frozen=True)
class Slice:
    """One device's share of a partitioned operator."""

    operator_index: int
    device: int
    dim: PartitionDim
    extent: int
    weight_bytes: int
    activation_bytes: int


@dataclass(frozen=True)
class Partitioned:
    operator_index: int
    dim: PartitionDim
    slices: tuple[Slice, ...]

    @property
    def extents(self) -> tuple[int, ...]:
        return tuple(s.extent for s in self.slices)


@dataclass(frozen=True)
class Replicated:
    """Unpartitioned operator living on one designated device."""

    operator_index: int
    host: int
    weight_bytes: int
    activation_bytes: int


@dataclass(frozen=True)
class Mirrored:
    """Computed identically by every device on its full local copy.

    Used for the weightless pool/ReLU operators that follow an
    input-channel-partitioned operator: their input only exists after the
    partial-sum exchange, at which point every device holds the whole
    tensor and recomputing locally is cheaper than another round.
    """

    operator_index: int
    activation_bytes: int


Assignment = Union[Partitioned, Replicated, Mirrored]


@dataclass(frozen=True)
class Segment:
    """A single conv/fc operator, or an interleaved pair of them."""

    first: int
    second: int | None = None

    @property
    def is_pair(self) -> bool:
        return self.second is not None


@dataclass(frozen=True)
class Segmentation:
    """Ordered cover of the partitionable operators by segments."""

    segments: tuple[Segment, ...]

    @classmethod
    def singletons(cls, model: ModelSpec) -> "Segmentation":
        return cls(tuple(Segment(i) for i in partitionable_indices(model)))

    @property
    def pair_count(self) -> int:
        return sum(1 for s in self.segments if s.is_pair)

    def covered(self) -> list[int]:
        out: list[int] = []
        for seg in self.segments:
            out.append(seg.first)
            if seg.second is not None:
                out.append(seg.second)
        return out

    def describe(self) -> str:
        parts = [f"({s.first}, {s.second})" if s.is_pair else str(s.first)
                 for s in self.segments]
        return "[" + ", ".join(parts) + "]"


@dataclass(frozen=True)
class PartitionPlan:
    model: ModelSpec
    cluster: ClusterSpec
    shapes: tuple[TensorShape, ...]
    assignments: tuple[Assignment, ...]
    rounds: tuple[CommRound, ...]


# ---------------------------------------------------------------------------
# Structure helpers
# ---------------------------------------------------------------------------

def partitionable_indices(model: ModelSpec) -> list[int]:
    return [op.index for op in model.operators if op.partitionable]


def local_groups(model: ModelSpec) -> tuple[list[int], dict[int, list[int]]]:
    """(leading channel-local ops, trailing channel-local ops per conv/fc)."""
    leading: list[int] = []
    trailing: dict[int, list[int]] = {}
    owner: int | None = None
    for op in model.operators:
        if op.partitionable:
            owner = op.index
            trailing[owner] = []
        elif owner is None:
            leading.append(op.index)
        else:
            trailing[owner].append(op.index)
    return leading, trailing


def pair_legal(model: ModelSpec, first: int, second: int) -> bool:
    """Whether (first, second) may form an interleaved pair.

    Requires: both partitionable, second is the next partitionable operator,
    anything between is channel-local, and the channel counts line up
    one-to-one (a flatten between a conv and the first fully-connected
    operator changes the unit, so such pairs are rejected).
    """
    parts = partitionable_indices(model)
    if first not in parts or second not in parts:
        return False
    if parts.index(second) != parts.index(first) + 1:
        return False
    return model.operator(second).c_in == model.operator(first).c_out


def h_row_ranges(extents: list[int] | tuple[int, ...]) -> list[tuple[int, int]]:
    """Half-open row ranges [start, stop) per device for an H split."""
    ranges = []
    start = 0
    for extent in extents:
        ranges.append((start, start + extent))
        start += extent
    return ranges


def needed_input_rows(op: OperatorSpec, out_start: int, out_stop: int,
                      h_in: int) -> tuple[int, int]:
    """Input rows (half-open, clipped to the real tensor) required to compute
    output rows [out_start, out_stop) of `op`. Padding rows are synthesized
    locally and never transferred."""
    if out_stop <= out_start:
        return (0, 0)
    lo = out_start * op.stride - op.padding
    hi = (out_stop - 1) * op.stride - op.padding + op.kernel_h - 1
    return (max(lo, 0), min(hi, h_in - 1) + 1)


def halo_transfers(producer_ranges: list[tuple[int, int]], op: OperatorSpec,
                   consumer_ranges: list[tuple[int, int]],
                   h_in: int) -> list[tuple[int, int, int]]:
    """Rows each device must receive from each other device, as
    (receiver, sender, row_count) triples. Exact (need-based): for aligned
    stride-1 splits this reduces to max(kernel_h - stride, 0) rows per
    internal boundary."""
    transfers = []
    for receiver, (out_lo, out_hi) in enumerate(consumer_ranges):
        need_lo, need_hi = needed_input_rows(op, out_lo, out_hi, h_in)
        for sender, (own_lo, own_hi) in enumerate(producer_ranges):
            if sender == receiver:
                continue
            rows = min(need_hi, own_hi) - max(need_lo, own_lo)
            if rows > 0:
                transfers.append((receiver, sender, rows))
    return transfers


# ---------------------------------------------------------------------------
# Channel-dimension strategies (OC and interleaved pairs)
# ---------------------------------------------------------------------------

def _oc_assignment(op: OperatorSpec, extents: list[int],
                   out_shape: TensorShape) -> Partitioned:
    slices = tuple(
        Slice(op.index, j, PartitionDim.OC, extent,
              *slice_memory_bytes(op, PartitionDim.OC, extent, j, out_shape))
        for j, extent in enumerate(extents)
    )
    return Partitioned(op.index, PartitionDim.OC, slices)


def _ic_assignment(op: OperatorSpec, extents: list[int],
                   out_shape: TensorShape) -> Partitioned:
    slices = tuple(
        Slice(op.index, j, PartitionDim.IC, extent,
              *slice_memory_bytes(op, PartitionDim.IC, extent, j, out_shape))
        for j, extent in enumerate(extents)
    )
    return Partitioned(op.index, PartitionDim.IC, slices)


def _check_segmentation(model: ModelSpec, segmentation: Segmentation) -> None:
    expected = partitionable_indices(model)
    if segmentation.covered() != expected:
        raise ValidationError(
            f"segmentation {segmentation.describe()} does not cover the "
            f"partitionable operators {expected} exactly once in order"
        )


def _channel_plan(model: ModelSpec, cluster: ClusterSpec,
                  segmentation: Segmentation, final_gather: bool) -> PartitionPlan:
    shapes = infer_shapes(model)
    m = cluster.m
    weights = cluster.compute_weights
    leading, trailing = local_groups(model)
    _check_segmentation(model, segmentation)

    assignments: dict[int, Assignment] = {}
    rounds: list[CommRound] = []

    for idx in leading:
        assignments[idx] = Mirrored(idx, shapes[idx - 1].elements * ELEMENT_BYTES)

    for seg_pos, seg in enumerate(segmentation.segments):
        last_segment = seg_pos == len(segmentation.segments) - 1
        first_op = model.operator(seg.first)
        extents = proportional_split(first_op.c_out, weights)
        assignments[seg.first] = _oc_assignment(first_op, extents, shapes[seg.first - 1])
        for idx in trailing[seg.first]:
            assignments[idx] = _oc_assignment(model.operator(idx), extents,
                                              shapes[idx - 1])

        if not seg.is_pair:
            group_end = ([seg.first] + trailing[seg.first])[-1]
            out_shape = shapes[group_end - 1]
            slice_bytes = [e * out_shape.height * out_shape.width * ELEMENT_BYTES
                           for e in extents]
            if m > 1:
                if last_segment and final_gather:
                    sends = tuple(0 if j == 0 else slice_bytes[j] for j in range(m))
                    kind = RoundKind.GATHER_TO_ONE
                else:
                    sends = tuple(b * (m - 1) for b in slice_bytes)
                    kind = RoundKind.BROADCAST_CONCAT
                if any(sends):
                    rounds.append(CommRound(group_end, kind, sends))
            continue

        second_op = model.operator(seg.second)
        if not pair_legal(model, seg.first, seg.second):
            raise PairingError(
                f"operators {seg.first} and {seg.second} cannot be interleaved: "
                "they must be consecutive conv/fc operators whose channel "
                "counts match one-to-one"
            )
        assignments[seg.second] = _ic_assignment(second_op, extents,
                                                 shapes[seg.second - 1])
        full_bytes = shapes[seg.second - 1].elements * ELEMENT_BYTES
        if m > 1:
            if last_segment and final_gather:
                sends = tuple(
                    full_bytes if (j != 0 and extents[j] > 0) else 0 for j in range(m)
                )
                kind = RoundKind.GATHER_TO_ONE
            else:
                sends = tuple(
                    full_bytes * (m - 1) if extents[j] > 0 else 0 for j in range(m)
                )
                kind = RoundKind.ALL_EXCHANGE_SUM
            if any(sends):
                rounds.append(CommRound(seg.second, kind, sends))
        gathered = last_segment and final_gather
        for idx in trailing[seg.second]:
            act = shapes[idx - 1].elements * ELEMENT_BYTES
            if gathered:
                assignments[idx] = Replicated(idx, 0, 0, act)
            else:
                assignments[idx] = Mirrored(idx, act)

    plan = PartitionPlan(model, cluster, tuple(shapes),
                         tuple(assignments[op.index] for op in model.operators),
                         tuple(rounds))
    _require_feasible(plan)
    return plan


def plan_oc(model: ModelSpec, cluster: ClusterSpec, *,
            final_gather: bool = True) -> PartitionPlan:
    """Output-channel baseline: one broadcast-and-concat per conv/fc group."""
    return _channel_plan(model, cluster, Segmentation.singletons(model), final_gather)


def plan_iop(model: ModelSpec, cluster: ClusterSpec, segmentation: Segmentation, *,
             final_gather: bool = True) -> PartitionPlan:
    """Interleaved plan for a given segmentation; singleton segments behave
    exactly like the output-channel baseline."""
    return _channel_plan(model, cluster, segmentation, final_gather)


# ---------------------------------------------------------------------------
# Feature-map-row strategy (CoEdge-style)
# ---------------------------------------------------------------------------

def _h_assignment(op: OperatorSpec, extents: list[int],
                  out_shape: TensorShape) -> Partitioned:
    slices = tuple(
        Slice(op.index, j, PartitionDim.H, extent,
              *slice_memory_bytes(op, PartitionDim.H, extent, j, out_shape))
        for j, extent in enumerate(extents)
    )
    return Partitioned(op.index, PartitionDim.H, slices)


def plan_coedge(model: ModelSpec, cluster: ClusterSpec, *,
                final_gather: bool = True) -> PartitionPlan:
    """Row-partitioned conv stage, unpartitioned fully-connected stage.

    The input image is assumed pre-distributed (patches with overlap), so the
    first operator never needs an exchange. Each later conv-stage boundary
    exchanges exactly the rows the consumer needs but does not own. One
    gather assembles the activations on device 0 before the first
    fully-connected operator, which runs there together with everything
    after it.
    """
    shapes = infer_shapes(model)
    m = cluster.m
    weights = cluster.compute_weights
    fc_indices = [op.index for op in model.operators
                  if op.kind == OperatorKind.FULLY_CONNECTED]
    first_fc = fc_indices[0] if fc_indices else model.n + 1

    assignments: dict[int, Assignment] = {}
    rounds: list[CommRound] = []
    row_splits: dict[int, list[int]] = {0: proportional_split(model.input_shape.height,
                                                              weights)}

    for op in model.operators[:first_fc - 1]:
        extents = proportional_split(shapes[op.index - 1].height, weights)
        row_splits[op.index] = extents
        assignments[op.index] = _h_assignment(op, extents, shapes[op.index - 1])
        if op.index == 1:
            continue
        producer = op.index - 1
        prod_shape = shapes[producer - 1]
        transfers = halo_transfers(h_row_ranges(row_splits[producer]), op,
                                   h_row_ranges(extents), prod_shape.height)
        if transfers:
            row_bytes = prod_shape.channels * prod_shape.width * ELEMENT_BYTES
            sends = [0] * m
            for _, sender, rows in transfers:
                sends[sender] += rows * row_bytes
            rounds.append(CommRound(producer, RoundKind.HALO_EXCHANGE, tuple(sends)))

    if first_fc <= model.n:
        producer = first_fc - 1
        prod_shape = shapes[producer - 1] if producer >= 1 else model.input_shape
        prod_split = row_splits[producer]
        row_bytes = prod_shape.channels * prod_shape.width * ELEMENT_BYTES
        sends = tuple(0 if j == 0 else prod_split[j] * row_bytes for j in range(m))
        if any(sends):
            rounds.append(CommRound(producer, RoundKind.GATHER_TO_ONE, sends))
        for op in model.operators[first_fc - 1:]:
            out_shape = shapes[op.index - 1]
            if op.partitionable:
                kernel = op.kernel_h * op.kernel_w * ELEMENT_BYTES
                weight_bytes = op.c_out * op.c_in * kernel + (
                    op.c_out * ELEMENT_BYTES if op.has_bias else 0)
            else:
                weight_bytes = 0
            assignments[op.index] = Replicated(op.index, 0, weight_bytes,
                                               out_shape.elements * ELEMENT_BYTES)
    elif final_gather and m > 1:
        last = model.n
        last_shape = shapes[last - 1]
        row_bytes = last_shape.channels * last_shape.width * ELEMENT_BYTES
        sends = tuple(0 if j == 0 else row_splits[last][j] * row_bytes
                      for j in range(m))
        if any(sends):
            rounds.append(CommRound(last, RoundKind.GATHER_TO_ONE, sends))

    plan = PartitionPlan(model, cluster, tuple(shapes),
                         tuple(assignments[op.index] for op in model.operators),
                         tuple(rounds))
    _require_feasible(plan)
    return plan


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstraintCheck:
    constraint: str
    ok: bool
    violations: tuple[str, ...]


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[ConstraintCheck, ...]

    @property
    def ok(self) -> bool:
        return all(check.ok for check in self.checks)

    @property
    def failures(self) -> list[str]:
        return [f"{check.constraint}: {violation}"
                for check in self.checks if not check.ok
                for violation in check.violations]

    def check(self, constraint: str) -> ConstraintCheck:
        for entry in self.checks:
            if entry.constraint == constraint:
                return entry
        raise KeyError(constraint)


def validate_plan(plan: PartitionPlan) -> ValidationReport:
    """Check dimension exclusivity, split conservation and memory capacity.

    Never raises; every constraint is reported with its violators.
    """
    from .cost_model import _per_device_peaks

    m = plan.cluster.m
    dim_violations: list[str] = []
    conservation_violations: list[str] = []

    for assignment in plan.assignments:
        if not isinstance(assignment, Partitioned):
            continue
        i = assignment.operator_index
        op = plan.model.operator(i)
        if [s.device for s in assignment.slices] != list(range(m)):
            dim_violations.append(f"operator {i}: expected one slice per device")
        if any(s.dim != assignment.dim for s in assignment.slices):
            dim_violations.append(f"operator {i}: mixed partition dimensions")
        if any(s.extent < 0 for s in assignment.slices):
            dim_violations.append(f"operator {i}: negative slice extent")

        total = sum(s.extent for s in assignment.slices)
        if assignment.dim == PartitionDim.OC:
            target, label = op.c_out, "c_out"
        elif assignment.dim == PartitionDim.IC:
            target, label = op.c_in, "c_in"
        else:
            target, label = plan.shapes[i - 1].height, "output height"
        if total != target:
            conservation_violations.append(
                f"operator {i}: {assignment.dim.value} extents sum to {total}, "
                f"expected {label} = {target}"
            )

    memory_violations: list[str] = []
    for j, peak in enumerate(_per_device_peaks(plan)):
        budget = plan.cluster.devices[j].memory
        if peak > budget:
            memory_violations.append(
                f"device {j}: peak {peak} bytes exceeds capacity {budget:.0f}"
            )

    checks = (
        ConstraintCheck("dimension-exclusivity", not dim_violations,
                        tuple(dim_violations)),
        ConstraintCheck("split-conservation", not conservation_violations,
                        tuple(conservation_violations)),
        ConstraintCheck("memory-capacity", not memory_violations,
                        tuple(memory_violations)),
    )
    return ValidationReport(checks)


def _require_feasible(plan: PartitionPlan) -> None:
    report = validate_plan(plan)
    if not report.ok:
        raise InfeasibleMemory("; ".join(report.failures))


# ---------------------------------------------------------------------------
# Plan document
# ---------------------------------------------------------------------------

def plan_to_doc(plan: PartitionPlan) -> str:
    entries = []
    for assignment in plan.assignments:
        if isinstance(assignment, Partitioned):
            entries.append({
                "operator": assignment.operator_index,
                "type": "partitioned",
                "dim": assignment.dim.value,
                "extents": list(assignment.extents),
                "weight_bytes": [s.weight_bytes for s in assignment.slices],
                "activation_bytes": [s.activation_bytes for s in assignment.slices],
            })
        elif isinstance(assignment, Replicated):
            entries.append({
                "operator": assignment.operator_index,
                "type": "replicated",
                "host": assignment.host,
                "weight_bytes": assignment.weight_bytes,
                "activation_bytes": assignment.activation_bytes,
            })
        else:
            entries.append({
                "operator": assignment.operator_index,
                "type": "mirrored",
                "activation_bytes": assignment.activation_bytes,
            })
    doc = {
        "model": plan.model.name,
        "devices": plan.cluster.m,
        "assignments": entries,
        "rounds": [
            {
                "after_operator": r.after_operator,
                "kind": r.kind.value,
                "per_device_send_bytes": list(r.per_device_send_bytes),
            }
            for r in plan.rounds
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def plan_from_doc(model: ModelSpec, cluster: ClusterSpec, text: str) -> PartitionPlan:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"plan document: line {exc.lineno}, col {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or "assignments" not in doc or "rounds" not in doc:
        raise ParseError("plan document: expected an object with assignments and rounds")
    if doc.get("devices") != cluster.m:
        raise ParseError("plan document: device count does not match the cluster")

    raw = doc["assignments"]
    if not isinstance(raw, list) or len(raw) != model.n:
        raise ParseError("plan document: one assignment per operator required")
    assignments: list[Assignment] = []
    try:
        for entry, op in zip(raw, model.operators):
            if entry["operator"] != op.index:
                raise ParseError(f"plan document: assignment order broken at {entry}")
            if entry["type"] == "partitioned":
                dim = PartitionDim(entry["dim"])
                slices = tuple(
                    Slice(op.index, j, dim, entry["extents"][j],
                          entry["weight_bytes"][j], entry["activation_bytes"][j])
                    for j in range(cluster.m)
                )
                assignments.append(Partitioned(op.index, dim, slices))
            elif entry["type"] == "replicated":
                assignments.append(Replicated(op.index, entry["host"],
                                              entry["weight_bytes"],
                                              entry["activation_bytes"]))
            elif entry["type"] == "mirrored":
                assignments.append(Mirrored(op.index, entry["activation_bytes"]))
            else:
                raise ParseError(f"plan document: unknown assignment type {entry['type']!r}")
        rounds = tuple(
            CommRound(r["after_operator"], RoundKind(r["kind"]),
                      tuple(r["per_device_send_bytes"]))
            for r in doc["rounds"]
        )
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ParseError(f"plan document: malformed entry ({exc})") from exc

    return PartitionPlan(model, cluster, tuple(infer_shapes(model)),
                         tuple(assignments), rounds)
