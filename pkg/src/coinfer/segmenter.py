"""Model segmentation: choosing which operator pairs to interleave.

The greedy pass scans conv/fc operators left to right. For each legal
candidate pair it costs a two-operator window (the pair plus any absorbed
pool/ReLU) under the interleaved scheme and under a baseline scheme, and
pairs whenever interleaving is no slower. Windows are costed as mid-model
fragments: the interleaved side ends with its partial-sum exchange, the
row-split side with its structural halo/gather rounds, and no final output
consolidation is charged to either.

An exhaustive oracle enumerates every legal pairing pattern of a small
model and evaluates each full plan, giving the true optimum to measure the
greedy gap against.
"""

from __future__ import annotations

from dataclasses import replace

from .cluster import ClusterSpec
from .cost_model import evaluate
from .errors import TooLarge
from .model_ir import ModelSpec, infer_shapes
from .partitioner import (
    Segment,
    Segmentation,
    local_groups,
    pair_legal,
    partitionable_indices,
    plan_coedge,
    plan_iop,
    plan_oc,
)

__all__ = [
    "Segment",
    "Segmentation",
    "greedy_segment",
    "exhaustive_segment",
    "EXHAUSTIVE_RAIL",
]

# Safety rail for the exhaustive oracle: pairing patterns grow like the
# Fibonacci numbers, ~10.9k full evaluations at 20 operators.
EXHAUSTIVE_RAIL = 20


def _window_model(model: ModelSpec, start_op: int, end_op: int) -> ModelSpec:
    """Sub-model spanning operators [start_op, end_op], re-indexed from 1."""
    shapes = infer_shapes(model)
    input_shape = model.input_shape if start_op == 1 else shapes[start_op - 2]
    ops = tuple(
        replace(op, index=new_index)
        for new_index, op in enumerate(model.operators[start_op - 1:end_op], start=1)
    )
    return ModelSpec(f"{model.name}[{start_op}:{end_op}]", input_shape, ops)


def _group_end(model: ModelSpec, partitionable: int) -> int:
    _, trailing = local_groups(model)
    group = [partitionable] + trailing[partitionable]
    return group[-1]


def greedy_segment(model: ModelSpec, cluster: ClusterSpec,
                   baseline: str = "coedge") -> Segmentation:
    """Left-to-right pairing by window cost comparison.

    Pairs (o_i, o_next) whenever the interleaved window time is <= the
    baseline window time (ties pair), then advances past both; otherwise
    emits a single segment and advances by one. `baseline` selects the
    non-pairing comparator: "coedge" (row-split window) or "oc"
    (broadcast-per-operator window).
    """
    if baseline not in ("coedge", "oc"):
        raise ValueError(f"baseline must be 'coedge' or 'oc', got {baseline!r}")
    parts = partitionable_indices(model)
    segments: list[Segment] = []
    pos = 0
    while pos < len(parts):
        first = parts[pos]
        if pos + 1 < len(parts) and pair_legal(model, first, parts[pos + 1]):
            second = parts[pos + 1]
            window = _window_model(model, first, _group_end(model, second))
            window_pair = Segmentation((Segment(1, second - first + 1),))
            t_iop = evaluate(plan_iop(window, cluster, window_pair,
                                      final_gather=False)).total_ms
            if baseline == "coedge":
                t_base = evaluate(plan_coedge(window, cluster,
                                              final_gather=False)).total_ms
            else:
                t_base = evaluate(plan_oc(window, cluster,
                                          final_gather=False)).total_ms
            if t_iop <= t_base:
                segments.append(Segment(first, second))
                pos += 2
                continue
        segments.append(Segment(first))
        pos += 1
    return Segmentation(tuple(segments))


def _pairing_patterns(model: ModelSpec, parts: list[int]):
    """All legal segmentations over consecutive partitionable operators."""
    def extend(pos: int):
        if pos == len(parts):
            yield ()
            return
        for rest in extend(pos + 1):
            yield (Segment(parts[pos]),) + rest
        if pos + 1 < len(parts) and pair_legal(model, parts[pos], parts[pos + 1]):
            for rest in extend(pos + 2):
                yield (Segment(parts[pos], parts[pos + 1]),) + rest

    yield from extend(0)


def exhaustive_segment(model: ModelSpec,
                       cluster: ClusterSpec) -> tuple[Segmentation, float]:
    """Minimum-cost segmentation by full enumeration.

    Ties break toward fewer pairs, then lexicographically earliest pair
    positions. Deterministic for fixed inputs.
    """
    parts = partitionable_indices(model)
    if len(parts) > EXHAUSTIVE_RAIL:
        raise TooLarge(f"{len(parts)} partitionable operators exceed the "
                       f"exhaustive rail of {EXHAUSTIVE_RAIL}")
    best: tuple[float, int, tuple[int, ...]] | None = None
    best_seg: Segmentation | None = None
    for pattern in _pairing_patterns(model, parts):
        segmentation = Segmentation(pattern)
        cost = evaluate(plan_iop(model, cluster, segmentation)).total_ms
        pair_starts = tuple(s.first for s in pattern if s.is_pair)
        key = (cost, segmentation.pair_count, pair_starts)
        if best is None or key < best:
            best = key
            best_seg = segmentation
    assert best_seg is not None and best is not None
    return best_seg, best[0]
