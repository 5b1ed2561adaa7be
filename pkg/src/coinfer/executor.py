"""Numerical execution of plans against a centralized reference.

This module proves partition semantics on real tensors: output-channel
slices concatenate, input-channel partial sums add up, row blocks stitch
exactly with need-based halos. Execution is simulated on one host as a
deterministic device loop; timing is the cost model's job, correctness is
this module's. Tensors are float64 (wider than the 4-byte accounting
elements) so partitioning bugs are not masked by rounding noise; traffic is
still counted at 4 bytes per element to match the plan.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .cost_model import ELEMENT_BYTES, CommRound, RoundKind
from .errors import PlanExecutionError, ShapeError
from .model_ir import ModelSpec, OperatorKind, OperatorSpec
from .partitioner import (
    Mirrored,
    PartitionDim,
    Partitioned,
    PartitionPlan,
    Replicated,
    h_row_ranges,
    halo_transfers,
)

__all__ = [
    "OperatorWeights",
    "WeightSet",
    "random_weights",
    "random_input",
    "run_centralized",
    "run_partitioned",
    "check_equivalence",
    "SimTrace",
    "ComputeEvent",
    "CommEvent",
    "EquivalenceReport",
]


@dataclass(frozen=True)
class OperatorWeights:
    kernel: np.ndarray          # (c_out, c_in, kernel_h, kernel_w)
    bias: np.ndarray | None     # (c_out,)


@dataclass(frozen=True)
class WeightSet:
    per_operator: tuple[OperatorWeights | None, ...]

    def for_op(self, index: int) -> OperatorWeights | None:
        return self.per_operator[index - 1]


def random_weights(model: ModelSpec, rng: np.random.Generator) -> WeightSet:
    """Gaussian weights scaled by 1/sqrt(fan_in) so activations stay O(1)."""
    entries: list[OperatorWeights | None] = []
    for op in model.operators:
        if not op.partitionable:
            entries.append(None)
            continue
        fan_in = op.c_in * op.kernel_h * op.kernel_w
        kernel = rng.standard_normal(
            (op.c_out, op.c_in, op.kernel_h, op.kernel_w)) / np.sqrt(fan_in)
        bias = 0.1 * rng.standard_normal(op.c_out) if op.has_bias else None
        entries.append(OperatorWeights(kernel, bias))
    return WeightSet(tuple(entries))


def random_input(model: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    shape = model.input_shape
    return rng.standard_normal((shape.channels, shape.height, shape.width))


# ---------------------------------------------------------------------------
# Reference kernels (shared by the centralized and partitioned paths)
# ---------------------------------------------------------------------------

def _conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None,
            stride: int, padding: int) -> np.ndarray:
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    kh, kw = kernel.shape[2], kernel.shape[3]
    windows = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    out = np.tensordot(kernel, windows, axes=([1, 2, 3], [0, 3, 4]))
    if bias is not None:
        out = out + bias[:, None, None]
    return out


def _maxpool(x: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)),
                   constant_values=-np.inf)
    windows = sliding_window_view(x, (kernel, kernel), axis=(1, 2))[:, ::stride, ::stride]
    return windows.max(axis=(3, 4))


def _apply_spatial(op: OperatorSpec, x: np.ndarray,
                   weights: OperatorWeights | None) -> np.ndarray:
    """Run one operator on a (channels, rows, width) block."""
    if op.kind == OperatorKind.CONV:
        return _conv2d(x, weights.kernel, weights.bias, op.stride, op.padding)
    if op.kind == OperatorKind.POOL:
        return _maxpool(x, op.kernel_h, op.stride, op.padding)
    if op.kind == OperatorKind.ELEMENTWISE:
        return np.maximum(x, 0.0)
    raise PlanExecutionError(f"op {op.index}: unexpected kind {op.kind}")


def _flatten_for_fc(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, 1, 1)


def run_centralized(model: ModelSpec, x: np.ndarray, weights: WeightSet) -> np.ndarray:
    """Reference forward pass on a single device."""
    shape = model.input_shape
    if x.shape != (shape.channels, shape.height, shape.width):
        raise ShapeError(f"input shape {x.shape} does not match model "
                         f"{(shape.channels, shape.height, shape.width)}")
    cur = np.asarray(x, dtype=np.float64)
    for op in model.operators:
        if op.kind == OperatorKind.FULLY_CONNECTED:
            cur = _flatten_for_fc(cur)
            cur = _conv2d(cur, weights.for_op(op.index).kernel,
                          weights.for_op(op.index).bias, 1, 0)
        else:
            cur = _apply_spatial(op, cur, weights.for_op(op.index))
    return cur


# ---------------------------------------------------------------------------
# Trace
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComputeEvent:
    device: int
    operator_index: int
    extent: int


@dataclass(frozen=True)
class CommEvent:
    kind: RoundKind
    per_device_send_bytes: tuple[int, ...]


@dataclass
class SimTrace:
    events: list[Union[ComputeEvent, CommEvent]]

    @property
    def rounds(self) -> list[CommEvent]:
        return [e for e in self.events if isinstance(e, CommEvent)]

    def to_json(self) -> str:
        rows = []
        for event in self.events:
            if isinstance(event, ComputeEvent):
                rows.append({"compute": {"device": event.device,
                                         "operator": event.operator_index,
                                         "extent": event.extent}})
            else:
                rows.append({"round": {"kind": event.kind.value,
                                       "send_bytes": list(event.per_device_send_bytes)}})
        return json.dumps(rows, indent=2) + "\n"


# ---------------------------------------------------------------------------
# Partitioned execution
# ---------------------------------------------------------------------------

class _State:
    """Logical placement of the current activation across devices."""

    REPLICATED = "replicated"   # every device holds the full tensor
    OC = "oc"                   # per-device channel slices
    PARTIALS = "partials"       # per-device full-shape partial sums
    ROWS = "rows"               # per-device row blocks
    HOST = "host"               # full tensor on device 0 only


class _Simulator:
    def __init__(self, plan: PartitionPlan, x: np.ndarray, weights: WeightSet):
        self.plan = plan
        self.model = plan.model
        self.m = plan.cluster.m
        self.weights = weights
        self.trace = SimTrace([])
        self.mode = _State.REPLICATED
        self.full: np.ndarray | None = np.asarray(x, dtype=np.float64)
        self.slices: list[np.ndarray] = []
        self.extents: tuple[int, ...] = ()
        self.partials: list[np.ndarray | None] = []
        self.row_blocks: list[np.ndarray] = []
        self.row_ranges: list[tuple[int, int]] = []
        self.halo_ready_for: int | None = None
        self.rounds_after: dict[int, list[CommRound]] = {}
        for round_ in plan.rounds:
            self.rounds_after.setdefault(round_.after_operator, []).append(round_)

    # -- helpers ------------------------------------------------------------

    def _bytes(self, array: np.ndarray | None) -> int:
        return 0 if array is None else array.size * ELEMENT_BYTES

    def _fail(self, op_index: int, message: str) -> PlanExecutionError:
        return PlanExecutionError(f"op {op_index}: {message} (state={self.mode})")

    def _channel_offsets(self, extents: tuple[int, ...]) -> list[int]:
        offsets = [0]
        for extent in extents:
            offsets.append(offsets[-1] + extent)
        return offsets

    # -- operator execution --------------------------------------------------

    def run_op(self, op: OperatorSpec, assignment) -> None:
        if self.m == 1:
            self._run_single_device(op, assignment)
            return
        if isinstance(assignment, Partitioned):
            if assignment.dim == PartitionDim.OC:
                self._run_oc(op, assignment)
            elif assignment.dim == PartitionDim.IC:
                self._run_ic(op, assignment)
            else:
                self._run_rows(op, assignment)
        elif isinstance(assignment, Replicated):
            self._run_replicated(op, assignment)
        elif isinstance(assignment, Mirrored):
            self._run_mirrored(op)
        else:
            raise self._fail(op.index, f"unknown assignment {type(assignment)!r}")

    def _run_single_device(self, op: OperatorSpec, assignment) -> None:
        """One device holds everything: identical to the centralized pass."""
        x = self.full
        if op.kind == OperatorKind.FULLY_CONNECTED:
            x = _flatten_for_fc(x)
            w = self.weights.for_op(op.index)
            self.full = _conv2d(x, w.kernel, w.bias, 1, 0)
        else:
            self.full = _apply_spatial(op, x, self.weights.for_op(op.index))
        extent = assignment.slices[0].extent if isinstance(assignment, Partitioned) else 0
        self.trace.events.append(ComputeEvent(0, op.index, extent))
        self.mode = _State.REPLICATED

    def _run_oc(self, op: OperatorSpec, assignment: Partitioned) -> None:
        extents = assignment.extents
        offsets = self._channel_offsets(extents)
        if op.partitionable:
            if self.mode != _State.REPLICATED:
                raise self._fail(op.index, "channel-split operator needs the full input")
            x = self.full
            if op.kind == OperatorKind.FULLY_CONNECTED:
                x = _flatten_for_fc(x)
            w = self.weights.for_op(op.index)
            out_slices = []
            for j, extent in enumerate(extents):
                lo, hi = offsets[j], offsets[j + 1]
                if extent == 0:
                    out_slices.append(np.empty((0,) + _spatial_of(op, x), dtype=np.float64))
                    continue
                bias = w.bias[lo:hi] if w.bias is not None else None
                out_slices.append(_conv2d(x, w.kernel[lo:hi], bias, op.stride, op.padding))
                self.trace.events.append(ComputeEvent(j, op.index, extent))
            self.slices = out_slices
        else:
            if self.mode != _State.OC or self.extents != extents:
                raise self._fail(op.index, "channel-local operator misaligned with "
                                           "its producer's slices")
            out_slices = []
            for j, extent in enumerate(extents):
                if extent == 0:
                    shape = self.slices[j].shape
                    out_slices.append(np.empty((0,) + _spatial_after(op, shape[1:]),
                                               dtype=np.float64))
                    continue
                out_slices.append(_apply_spatial(op, self.slices[j], None))
                self.trace.events.append(ComputeEvent(j, op.index, extent))
            self.slices = out_slices
        self.mode = _State.OC
        self.extents = extents

    def _run_ic(self, op: OperatorSpec, assignment: Partitioned) -> None:
        extents = assignment.extents
        if self.mode != _State.OC:
            raise self._fail(op.index, "input-channel operator needs its producer's "
                                       "channel slices")
        if self.extents != extents:
            raise self._fail(op.index, f"input-channel extents {extents} do not match "
                                       f"producer slices {self.extents}")
        w = self.weights.for_op(op.index)
        offsets = self._channel_offsets(extents)
        partials: list[np.ndarray | None] = []
        for j, extent in enumerate(extents):
            if extent == 0:
                partials.append(None)
                continue
            lo, hi = offsets[j], offsets[j + 1]
            bias = w.bias if (w.bias is not None and j == 0) else None
            partials.append(_conv2d(self.slices[j], w.kernel[:, lo:hi], bias,
                                    op.stride, op.padding))
            self.trace.events.append(ComputeEvent(j, op.index, extent))
        self.partials = partials
        self.mode = _State.PARTIALS

    def _run_rows(self, op: OperatorSpec, assignment: Partitioned) -> None:
        extents = assignment.extents
        out_ranges = h_row_ranges(extents)
        if self.mode == _State.REPLICATED:
            # Model input: pre-distributed with whatever overlap each device
            # needs, so no transfer and no availability bookkeeping.
            producer_full = self.full
            producer_ranges = None
        elif self.mode == _State.ROWS:
            producer_full = np.concatenate(self.row_blocks, axis=1)
            producer_ranges = self.row_ranges
        else:
            raise self._fail(op.index, "row-split operator needs row-distributed input")

        h_in = producer_full.shape[1]
        if producer_ranges is not None:
            needed = halo_transfers(producer_ranges, op, out_ranges, h_in)
            if needed and self.halo_ready_for != op.index:
                raise self._fail(op.index, "missing halo exchange for required rows")
        self.halo_ready_for = None

        padded = np.pad(producer_full,
                        ((0, 0), (op.padding, op.padding), (op.padding, op.padding)),
                        constant_values=(-np.inf if op.kind == OperatorKind.POOL else 0.0))
        blocks = []
        for j, (lo, hi) in enumerate(out_ranges):
            if hi <= lo:
                blocks.append(np.empty((producer_full.shape[0] if not op.partitionable
                                        else op.c_out, 0,
                                        _out_width(op, producer_full.shape[2])),
                                       dtype=np.float64))
                continue
            row_lo = lo * op.stride
            row_hi = (hi - 1) * op.stride + op.kernel_h
            block_in = padded[:, row_lo:row_hi, :]
            if op.kind == OperatorKind.CONV:
                w = self.weights.for_op(op.index)
                out = _conv2d(block_in, w.kernel, w.bias, op.stride, 0)
            elif op.kind == OperatorKind.POOL:
                out = _maxpool(block_in, op.kernel_h, op.stride, 0)
            else:
                out = np.maximum(producer_full[:, lo:hi, :], 0.0)
            blocks.append(out)
            self.trace.events.append(ComputeEvent(j, op.index, hi - lo))
        self.row_blocks = blocks
        self.row_ranges = out_ranges
        self.mode = _State.ROWS

    def _run_replicated(self, op: OperatorSpec, assignment: Replicated) -> None:
        if self.mode == _State.REPLICATED:
            x = self.full
        elif self.mode == _State.HOST:
            x = self.full
        elif self.mode == _State.ROWS and self.row_ranges[0][1] - self.row_ranges[0][0] \
                == sum(hi - lo for lo, hi in self.row_ranges):
            # Gather was skipped because device 0 already owns every row.
            x = self.row_blocks[0]
        else:
            raise self._fail(op.index, "replicated operator needs its input on device 0")
        if op.kind == OperatorKind.FULLY_CONNECTED:
            x = _flatten_for_fc(x)
            out = _conv2d(x, self.weights.for_op(op.index).kernel,
                          self.weights.for_op(op.index).bias, 1, 0)
        else:
            out = _apply_spatial(op, x, self.weights.for_op(op.index))
        self.trace.events.append(ComputeEvent(assignment.host, op.index, 0))
        self.full = out
        self.mode = _State.HOST

    def _run_mirrored(self, op: OperatorSpec) -> None:
        if self.mode != _State.REPLICATED:
            raise self._fail(op.index, "mirrored operator needs the full tensor "
                                       "on every device")
        out = _apply_spatial(op, self.full, self.weights.for_op(op.index))
        for j in range(self.m):
            self.trace.events.append(ComputeEvent(j, op.index, 0))
        self.full = out

    # -- rounds ---------------------------------------------------------------

    def run_round(self, round_: CommRound) -> None:
        kind = round_.kind
        if kind == RoundKind.BROADCAST_CONCAT:
            if self.mode != _State.OC:
                raise self._fail(round_.after_operator, "broadcast expects channel slices")
            sends = tuple(self._bytes(s) * (self.m - 1) for s in self.slices)
            self.full = np.concatenate(self.slices, axis=0)
            self.mode = _State.REPLICATED
        elif kind == RoundKind.ALL_EXCHANGE_SUM:
            if self.mode != _State.PARTIALS:
                raise self._fail(round_.after_operator, "exchange-sum expects partials")
            sends = tuple(self._bytes(p) * (self.m - 1) for p in self.partials)
            self.full = _sum_partials(self.partials)
            self.mode = _State.REPLICATED
        elif kind == RoundKind.GATHER_TO_ONE:
            sends, gathered = self._gather()
            self.full = gathered
            self.mode = _State.HOST
        elif kind == RoundKind.HALO_EXCHANGE:
            sends = self._halo(round_.after_operator)
        else:  # pragma: no cover
            raise self._fail(round_.after_operator, f"unknown round kind {kind}")
        self.trace.events.append(CommEvent(kind, sends))

    def _gather(self) -> tuple[tuple[int, ...], np.ndarray]:
        if self.mode == _State.OC:
            sends = tuple(0 if j == 0 else self._bytes(s)
                          for j, s in enumerate(self.slices))
            return sends, np.concatenate(self.slices, axis=0)
        if self.mode == _State.PARTIALS:
            sends = tuple(0 if j == 0 else self._bytes(p)
                          for j, p in enumerate(self.partials))
            return sends, _sum_partials(self.partials)
        if self.mode == _State.ROWS:
            sends = tuple(0 if j == 0 else self._bytes(b)
                          for j, b in enumerate(self.row_blocks))
            return sends, np.concatenate(self.row_blocks, axis=1)
        raise PlanExecutionError(f"gather round in unexpected state {self.mode}")

    def _halo(self, after_operator: int) -> tuple[int, ...]:
        if self.mode != _State.ROWS:
            raise PlanExecutionError(f"halo round after op {after_operator} "
                                     f"in state {self.mode}")
        consumer_index = after_operator + 1
        consumer = self.model.operator(consumer_index)
        cons_assignment = self.plan.assignments[consumer_index - 1]
        if not (isinstance(cons_assignment, Partitioned)
                and cons_assignment.dim == PartitionDim.H):
            raise PlanExecutionError(f"halo round after op {after_operator} has no "
                                     "row-split consumer")
        h_in = sum(hi - lo for lo, hi in self.row_ranges)
        transfers = halo_transfers(self.row_ranges, consumer,
                                   h_row_ranges(cons_assignment.extents), h_in)
        channels = self.row_blocks[0].shape[0]
        width = self.row_blocks[0].shape[2]
        sends = [0] * self.m
        for _, sender, rows in transfers:
            sends[sender] += rows * channels * width * ELEMENT_BYTES
        self.halo_ready_for = consumer_index
        return tuple(sends)

    # -- driver ---------------------------------------------------------------

    def run(self) -> np.ndarray:
        model_shape = self.model.input_shape
        if self.full.shape != (model_shape.channels, model_shape.height,
                               model_shape.width):
            raise ShapeError(f"input shape {self.full.shape} does not match model "
                             f"{(model_shape.channels, model_shape.height, model_shape.width)}")
        for op, assignment in zip(self.model.operators, self.plan.assignments):
            self.run_op(op, assignment)
            for round_ in self.rounds_after.get(op.index, []):
                self.run_round(round_)
        if self.mode in (_State.HOST, _State.REPLICATED):
            return self.full
        if self.mode == _State.OC:
            return np.concatenate(self.slices, axis=0)
        if self.mode == _State.PARTIALS:
            return _sum_partials(self.partials)
        return np.concatenate(self.row_blocks, axis=1)


def _sum_partials(partials: list[np.ndarray | None]) -> np.ndarray:
    total: np.ndarray | None = None
    for partial in partials:  # ascending device id: deterministic reduction
        if partial is None:
            continue
        total = partial.copy() if total is None else total + partial
    if total is None:
        raise PlanExecutionError("no partial sums to reduce")
    return total


def _spatial_of(op: OperatorSpec, x: np.ndarray) -> tuple[int, int]:
    h = (x.shape[1] + 2 * op.padding - op.kernel_h) // op.stride + 1
    w = (x.shape[2] + 2 * op.padding - op.kernel_w) // op.stride + 1
    return (h, w)


def _spatial_after(op: OperatorSpec, hw: tuple[int, int]) -> tuple[int, int]:
    h = (hw[0] + 2 * op.padding - op.kernel_h) // op.stride + 1
    w = (hw[1] + 2 * op.padding - op.kernel_w) // op.stride + 1
    return (h, w)


def _out_width(op: OperatorSpec, w_in: int) -> int:
    return (w_in + 2 * op.padding - op.kernel_w) // op.stride + 1


def run_partitioned(plan: PartitionPlan, x: np.ndarray,
                    weights: WeightSet) -> tuple[np.ndarray, SimTrace]:
    """Simulate the plan device-by-device; returns device 0's final output."""
    sim = _Simulator(plan, x, weights)
    out = sim.run()
    return out, sim.trace


# ---------------------------------------------------------------------------
# Equivalence harness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EquivalenceReport:
    trials: int
    tolerance: float
    max_rel_error: float
    passed: bool
    per_trial: tuple[float, ...]

    def to_json(self) -> str:
        return json.dumps({
            "trials": self.trials,
            "tolerance": self.tolerance,
            "max_rel_error": self.max_rel_error,
            "passed": self.passed,
            "per_trial": list(self.per_trial),
        }, indent=2) + "\n"


def rel_error(result: np.ndarray, reference: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(reference))), 1e-30)
    return float(np.max(np.abs(result - reference))) / scale


def check_equivalence(model: ModelSpec, plan: PartitionPlan, trials: int,
                      seed: int, tolerance: float = 1e-6) -> EquivalenceReport:
    """Random (weights, input) draws; reports the worst relative error.

    Failures are reported, never raised.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(trials):
        weights = random_weights(model, rng)
        x = random_input(model, rng)
        reference = run_centralized(model, x, weights)
        result, _ = run_partitioned(plan, x, weights)
        errors.append(rel_error(result, reference))
    worst = max(errors)
    return EquivalenceReport(trials, tolerance, worst, worst <= tolerance,
                             tuple(errors))
