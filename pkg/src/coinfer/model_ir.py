"""Sequential CNN intermediate representation.

A model is an ordered list of operators, each described by the tuple
(c_in, c_out, kernel_w, kernel_h, stride, padding). Fully-connected layers
are encoded as 1x1 convolutions over a flattened (features, 1, 1) tensor;
the flatten before the first fully-connected operator is implicit in shape
inference and moves no data. Pooling and elementwise (ReLU) operators are
explicit so that partition strategies can reason about what sits between
two convolutions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

from .errors import ParseError, ShapeError, UnknownModel, ValidationError

__all__ = [
    "OperatorKind",
    "OperatorSpec",
    "TensorShape",
    "ModelSpec",
    "infer_shapes",
    "model_zoo",
    "load_model",
    "save_model",
    "ZOO_NAMES",
]


class OperatorKind(Enum):
    CONV = "conv"
    FULLY_CONNECTED = "fully_connected"
    POOL = "pool"
    ELEMENTWISE = "elementwise"


# Operators that carry weights and participate in channel partitioning.
PARTITIONABLE_KINDS = (OperatorKind.CONV, OperatorKind.FULLY_CONNECTED)


@dataclass(frozen=True)
class TensorShape:
    channels: int
    height: int
    width: int

    def __post_init__(self):
        if self.channels < 1 or self.height < 1 or self.width < 1:
            raise ValidationError(f"tensor extents must be >= 1, got {self}")

    @property
    def elements(self) -> int:
        return self.channels * self.height * self.width


@dataclass(frozen=True)
class OperatorSpec:
    """One operator: position, kind and its parameter tuple."""

    index: int
    kind: OperatorKind
    c_in: int
    c_out: int
    kernel_w: int
    kernel_h: int
    stride: int
    padding: int
    has_bias: bool = False

    def __post_init__(self):
        if self.index < 1:
            raise ValidationError(f"operator index must be 1-based, got {self.index}")
        if self.c_in < 1 or self.c_out < 1:
            raise ValidationError(
                f"op {self.index}: channel counts must be >= 1 "
                f"(c_in={self.c_in}, c_out={self.c_out})"
            )
        if self.kernel_w < 1 or self.kernel_h < 1:
            raise ValidationError(f"op {self.index}: kernel extents must be >= 1")
        if self.stride < 1:
            raise ValidationError(f"op {self.index}: stride must be >= 1")
        if self.padding < 0:
            raise ValidationError(f"op {self.index}: padding must be >= 0")
        if self.kind in (OperatorKind.POOL, OperatorKind.ELEMENTWISE):
            if self.c_out != self.c_in:
                raise ValidationError(
                    f"op {self.index}: {self.kind.value} must keep c_out == c_in"
                )
            if self.has_bias:
                raise ValidationError(f"op {self.index}: only conv/fc may carry a bias")
        if self.kind == OperatorKind.ELEMENTWISE:
            if (self.kernel_w, self.kernel_h, self.stride, self.padding) != (1, 1, 1, 0):
                raise ValidationError(f"op {self.index}: elementwise must be 1x1/s1/p0")
        if self.kind == OperatorKind.FULLY_CONNECTED:
            # Encoded over the flattened input, so the spatial kernel is 1x1.
            if (self.kernel_w, self.kernel_h, self.stride, self.padding) != (1, 1, 1, 0):
                raise ValidationError(
                    f"op {self.index}: fully_connected is encoded as a 1x1 conv "
                    "over flattened features (kernel 1x1, stride 1, padding 0)"
                )

    @property
    def partitionable(self) -> bool:
        return self.kind in PARTITIONABLE_KINDS


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_shape: TensorShape
    operators: tuple[OperatorSpec, ...]

    def __post_init__(self):
        if not self.operators:
            raise ValidationError("a model needs at least one operator")
        for pos, op in enumerate(self.operators, start=1):
            if op.index != pos:
                raise ValidationError(
                    f"operator indices must be 1..n in order (op {pos} has index {op.index})"
                )

    @property
    def n(self) -> int:
        return len(self.operators)

    def operator(self, index: int) -> OperatorSpec:
        return self.operators[index - 1]


def _conv_extent(extent: int, kernel: int, stride: int, padding: int, index: int) -> int:
    out = (extent + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ShapeError(
            f"op {index}: kernel {kernel} exceeds padded input extent "
            f"{extent + 2 * padding}"
        )
    return out


def infer_shapes(model: ModelSpec) -> list[TensorShape]:
    """Output shape of every operator, in order.

    Conv/pool spatial extents follow floor((in + 2p - k)/s) + 1. The first
    fully-connected operator consumes the flattened previous output.
    """
    shapes: list[TensorShape] = []
    current = model.input_shape
    for op in model.operators:
        if op.kind == OperatorKind.FULLY_CONNECTED:
            flat = current.elements
            if op.c_in != flat:
                raise ShapeError(
                    f"op {op.index}: fully_connected expects c_in == flattened "
                    f"input ({flat}), got {op.c_in}"
                )
            current = TensorShape(op.c_out, 1, 1)
        else:
            if op.c_in != current.channels:
                raise ShapeError(
                    f"op {op.index}: c_in={op.c_in} does not chain with producer "
                    f"channels {current.channels}"
                )
            h = _conv_extent(current.height, op.kernel_h, op.stride, op.padding, op.index)
            w = _conv_extent(current.width, op.kernel_w, op.stride, op.padding, op.index)
            current = TensorShape(op.c_out, h, w)
        shapes.append(current)
    return shapes


# ---------------------------------------------------------------------------
# Model zoo
# ---------------------------------------------------------------------------

ZOO_NAMES = ("lenet", "alexnet", "vgg11", "vgg13", "vgg16", "vgg19")

_VGG_CONV_PLANS = {
    # Channel per conv; "M" is a 2x2/s2 max-pool.
    "vgg11": (64, "M", 128, "M", 256, 256, "M", 512, 512, "M", 512, 512, "M"),
    "vgg13": (64, 64, "M", 128, 128, "M", 256, 256, "M", 512, 512, "M", 512, 512, "M"),
    "vgg16": (64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M",
              512, 512, 512, "M"),
    "vgg19": (64, 64, "M", 128, 128, "M", 256, 256, 256, 256, "M", 512, 512, 512, 512,
              "M", 512, 512, 512, 512, "M"),
}


class _Builder:
    """Accumulates operators while tracking the running shape."""

    def __init__(self, input_shape: TensorShape):
        self.input_shape = input_shape
        self.shape = input_shape
        self.ops: list[OperatorSpec] = []

    def _add(self, **kw) -> None:
        op = OperatorSpec(index=len(self.ops) + 1, **kw)
        self.ops.append(op)
        partial = ModelSpec("_partial", self.input_shape, tuple(self.ops))
        self.shape = infer_shapes(partial)[-1]

    def conv(self, c_out: int, k: int, s: int = 1, p: int = 0) -> None:
        self._add(kind=OperatorKind.CONV, c_in=self.shape.channels, c_out=c_out,
                  kernel_w=k, kernel_h=k, stride=s, padding=p, has_bias=True)

    def relu(self) -> None:
        c = self.shape.channels
        self._add(kind=OperatorKind.ELEMENTWISE, c_in=c, c_out=c,
                  kernel_w=1, kernel_h=1, stride=1, padding=0)

    def pool(self, k: int, s: int) -> None:
        c = self.shape.channels
        self._add(kind=OperatorKind.POOL, c_in=c, c_out=c,
                  kernel_w=k, kernel_h=k, stride=s, padding=0)

    def fc(self, c_out: int) -> None:
        self._add(kind=OperatorKind.FULLY_CONNECTED, c_in=self.shape.elements,
                  c_out=c_out, kernel_w=1, kernel_h=1, stride=1, padding=0,
                  has_bias=True)

    def build(self, name: str) -> ModelSpec:
        return ModelSpec(name, self.input_shape, tuple(self.ops))


def model_zoo(name: str, input_hw: int | None = None) -> ModelSpec:
    """Build a zoo model by name.

    `input_hw` overrides the spatial input size (the channel plan is kept and
    fully-connected widths are preserved; only the first FC input is rescaled).
    Useful for keeping numerical-equivalence runs cheap.
    """
    if name not in ZOO_NAMES:
        raise UnknownModel(f"unknown model {name!r}; known: {', '.join(ZOO_NAMES)}")

    if name == "lenet":
        hw = 28 if input_hw is None else input_hw
        b = _Builder(TensorShape(1, hw, hw))
        b.conv(6, k=5, s=1, p=2)
        b.relu()
        b.pool(2, 2)
        b.conv(16, k=5, s=1, p=0)
        b.relu()
        b.pool(2, 2)
        b.fc(120)
        b.relu()
        b.fc(84)
        b.relu()
        b.fc(10)
        return b.build(name)

    if name == "alexnet":
        hw = 227 if input_hw is None else input_hw
        b = _Builder(TensorShape(3, hw, hw))
        b.conv(96, k=11, s=4, p=0)
        b.relu()
        b.pool(3, 2)
        b.conv(256, k=5, s=1, p=2)
        b.relu()
        b.pool(3, 2)
        b.conv(384, k=3, s=1, p=1)
        b.relu()
        b.conv(384, k=3, s=1, p=1)
        b.relu()
        b.conv(256, k=3, s=1, p=1)
        b.relu()
        b.pool(3, 2)
        b.fc(4096)
        b.relu()
        b.fc(4096)
        b.relu()
        b.fc(1000)
        return b.build(name)

    hw = 224 if input_hw is None else input_hw
    b = _Builder(TensorShape(3, hw, hw))
    for step in _VGG_CONV_PLANS[name]:
        if step == "M":
            b.pool(2, 2)
        else:
            b.conv(int(step), k=3, s=1, p=1)
            b.relu()
    b.fc(4096)
    b.relu()
    b.fc(4096)
    b.relu()
    b.fc(1000)
    return b.build(name)


# ---------------------------------------------------------------------------
# Serialization (strict JSON document, see docs/model-spec.md)
# ---------------------------------------------------------------------------

_OP_FIELDS = {"kind", "c_in", "c_out", "kernel_w", "kernel_h", "stride", "padding",
              "has_bias"}
_DOC_FIELDS = {"name", "input_shape", "operators"}


def save_model(model: ModelSpec) -> str:
    doc = {
        "name": model.name,
        "input_shape": [model.input_shape.channels, model.input_shape.height,
                        model.input_shape.width],
        "operators": [
            {
                "kind": op.kind.value,
                "c_in": op.c_in,
                "c_out": op.c_out,
                "kernel_w": op.kernel_w,
                "kernel_h": op.kernel_h,
                "stride": op.stride,
                "padding": op.padding,
                "has_bias": op.has_bias,
            }
            for op in model.operators
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def _require(doc: dict, key: str, context: str):
    if key not in doc:
        raise ParseError(f"{context}: missing field {key!r}")
    return doc[key]


def load_model(text: str) -> ModelSpec:
    """Parse a model document. Unknown fields are rejected (strict mode)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"model document: line {exc.lineno}, col {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError("model document: top level must be an object")
    unknown = set(doc) - _DOC_FIELDS
    if unknown:
        raise ParseError(f"model document: unknown field(s) {sorted(unknown)}")

    name = _require(doc, "name", "model document")
    raw_shape = _require(doc, "input_shape", "model document")
    if not (isinstance(raw_shape, list) and len(raw_shape) == 3
            and all(isinstance(v, int) for v in raw_shape)):
        raise ParseError("model document: input_shape must be [channels, height, width]")
    raw_ops = _require(doc, "operators", "model document")
    if not isinstance(raw_ops, list) or not raw_ops:
        raise ParseError("model document: operators must be a non-empty array")

    ops = []
    for pos, entry in enumerate(raw_ops, start=1):
        if not isinstance(entry, dict):
            raise ParseError(f"operator {pos}: must be an object")
        unknown = set(entry) - _OP_FIELDS
        if unknown:
            raise ParseError(f"operator {pos}: unknown field(s) {sorted(unknown)}")
        kind_name = _require(entry, "kind", f"operator {pos}")
        try:
            kind = OperatorKind(kind_name)
        except ValueError:
            raise ParseError(f"operator {pos}: unknown kind {kind_name!r}") from None
        for key in ("c_in", "c_out", "kernel_w", "kernel_h", "stride", "padding"):
            value = _require(entry, key, f"operator {pos}")
            if not isinstance(value, int):
                raise ParseError(f"operator {pos}: field {key!r} must be an integer")
        has_bias = entry.get("has_bias", kind in PARTITIONABLE_KINDS)
        if not isinstance(has_bias, bool):
            raise ParseError(f"operator {pos}: has_bias must be a boolean")
        ops.append(OperatorSpec(
            index=pos, kind=kind, c_in=entry["c_in"], c_out=entry["c_out"],
            kernel_w=entry["kernel_w"], kernel_h=entry["kernel_h"],
            stride=entry["stride"], padding=entry["padding"], has_bias=has_bias,
        ))

    try:
        shape = TensorShape(*raw_shape)
        model = ModelSpec(str(name), shape, tuple(ops))
        infer_shapes(model)
    except ShapeError as exc:
        raise ValidationError(str(exc)) from exc
    return model
