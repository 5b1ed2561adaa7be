"""Device cluster description and proportional work allocation.

A cluster is m devices, each with a compute rate (MAC operations per
millisecond) and a memory budget (bytes), sharing one uniform link bandwidth
(bytes per millisecond) and one per-round connection-establishment latency
(milliseconds).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .errors import ParseError, ValidationError

__all__ = [
    "DeviceSpec",
    "ClusterSpec",
    "proportional_split",
    "load_cluster",
    "save_cluster",
    "default_cluster",
    "DEFAULT_COMPUTE",
    "DEFAULT_MEMORY",
    "DEFAULT_BANDWIDTH",
    "DEFAULT_CONN_LATENCY",
    "DEFAULT_DEVICES",
]

# Documented in docs/defaults.md: a synthetic three-device setup in which
# connection setup, link transfer and compute are all non-negligible.
DEFAULT_DEVICES = 3
DEFAULT_COMPUTE = 2.0e8      # MAC/ms per device
DEFAULT_MEMORY = 1.0e9       # bytes per device
DEFAULT_BANDWIDTH = 1.0e6    # bytes/ms, shared by all links
DEFAULT_CONN_LATENCY = 2.0   # ms per communication round


@dataclass(frozen=True)
class DeviceSpec:
    id: int
    compute: float   # MAC/ms
    memory: float    # bytes

    def __post_init__(self):
        if self.compute <= 0:
            raise ValidationError(f"device {self.id}: compute must be > 0")
        if self.memory <= 0:
            raise ValidationError(f"device {self.id}: memory must be > 0")


@dataclass(frozen=True)
class ClusterSpec:
    devices: tuple[DeviceSpec, ...]
    bandwidth: float      # bytes/ms
    conn_latency: float   # ms per round

    def __post_init__(self):
        if not self.devices:
            raise ValidationError("a cluster needs at least one device")
        for pos, dev in enumerate(self.devices):
            if dev.id != pos:
                raise ValidationError("device ids must be 0..m-1 in order")
        if self.bandwidth <= 0:
            raise ValidationError("bandwidth must be > 0")
        if self.conn_latency < 0:
            raise ValidationError("conn_latency must be >= 0")

    @property
    def m(self) -> int:
        return len(self.devices)

    @property
    def compute_weights(self) -> list[float]:
        return [dev.compute for dev in self.devices]

    @classmethod
    def homogeneous(cls, m: int, compute: float = DEFAULT_COMPUTE,
                    memory: float = DEFAULT_MEMORY,
                    bandwidth: float = DEFAULT_BANDWIDTH,
                    conn_latency: float = DEFAULT_CONN_LATENCY) -> "ClusterSpec":
        devices = tuple(DeviceSpec(j, compute, memory) for j in range(m))
        return cls(devices, bandwidth, conn_latency)


def default_cluster(m: int = DEFAULT_DEVICES, conn_latency: float = DEFAULT_CONN_LATENCY,
                    bandwidth: float = DEFAULT_BANDWIDTH) -> ClusterSpec:
    return ClusterSpec.homogeneous(m, bandwidth=bandwidth, conn_latency=conn_latency)


def proportional_split(total: int, weights: Sequence[float]) -> list[int]:
    """Apportion `total` integer units in proportion to `weights`.

    Largest-remainder rounding: floor every quota, then hand the remaining
    units to the largest fractional remainders, ties broken toward the lowest
    index. The parts always sum to `total`. Quotas are computed with exact
    rational arithmetic so tie-breaking is not at the mercy of float noise.
    """
    if total < 0:
        raise ValidationError(f"total must be >= 0, got {total}")
    if not weights:
        raise ValidationError("weights must be non-empty")
    if any(w <= 0 for w in weights):
        raise ValidationError("weights must all be > 0")

    weight_sum = sum(Fraction(w) for w in weights)
    quotas = [Fraction(total) * Fraction(w) / weight_sum for w in weights]
    parts = [int(q) for q in quotas]  # Fraction truncation == floor for q >= 0
    leftover = total - sum(parts)
    by_remainder = sorted(range(len(weights)), key=lambda j: (parts[j] - quotas[j], j))
    for j in by_remainder[:leftover]:
        parts[j] += 1
    return parts


# ---------------------------------------------------------------------------
# Cluster document (same JSON family as the model document)
# ---------------------------------------------------------------------------

_DOC_FIELDS = {"devices", "bandwidth", "conn_latency"}
_DEV_FIELDS = {"compute", "memory"}


def save_cluster(cluster: ClusterSpec) -> str:
    doc = {
        "devices": [{"compute": d.compute, "memory": d.memory} for d in cluster.devices],
        "bandwidth": cluster.bandwidth,
        "conn_latency": cluster.conn_latency,
    }
    return json.dumps(doc, indent=2) + "\n"


def load_cluster(text: str) -> ClusterSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"cluster document: line {exc.lineno}, col {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError("cluster document: top level must be an object")
    unknown = set(doc) - _DOC_FIELDS
    if unknown:
        raise ParseError(f"cluster document: unknown field(s) {sorted(unknown)}")
    for key in _DOC_FIELDS:
        if key not in doc:
            raise ParseError(f"cluster document: missing field {key!r}")
    raw_devices = doc["devices"]
    if not isinstance(raw_devices, list) or not raw_devices:
        raise ParseError("cluster document: devices must be a non-empty array")
    devices = []
    for pos, entry in enumerate(raw_devices):
        if not isinstance(entry, dict) or set(entry) != _DEV_FIELDS:
            raise ParseError(f"device {pos}: must be an object with compute and memory")
        if not all(isinstance(entry[k], (int, float)) for k in _DEV_FIELDS):
            raise ParseError(f"device {pos}: compute and memory must be numbers")
        devices.append(DeviceSpec(pos, float(entry["compute"]), float(entry["memory"])))
    if not all(isinstance(doc[k], (int, float)) for k in ("bandwidth", "conn_latency")):
        raise ParseError("cluster document: bandwidth and conn_latency must be numbers")
    return ClusterSpec(tuple(devices), float(doc["bandwidth"]), float(doc["conn_latency"]))
