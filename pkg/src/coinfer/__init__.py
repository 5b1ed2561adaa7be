"""Cooperative CNN inference: partition planning, cost modeling, verification."""

from .cluster import (
    ClusterSpec,
    DeviceSpec,
    default_cluster,
    load_cluster,
    proportional_split,
    save_cluster,
)
from .cost_model import CommRound, CostReport, RoundKind, comm_delay, compute_delay, evaluate
from .errors import (
    CoinferError,
    InfeasibleMemory,
    InvalidPlan,
    PairingError,
    ParseError,
    PlanExecutionError,
    ShapeError,
    TooLarge,
    UnknownModel,
    ValidationError,
)
from .executor import (
    EquivalenceReport,
    SimTrace,
    WeightSet,
    check_equivalence,
    random_input,
    random_weights,
    run_centralized,
    run_partitioned,
)
from .model_ir import (
    ModelSpec,
    OperatorKind,
    OperatorSpec,
    TensorShape,
    infer_shapes,
    load_model,
    model_zoo,
    save_model,
)
from .partitioner import (
    PartitionDim,
    PartitionPlan,
    Segment,
    Segmentation,
    plan_coedge,
    plan_iop,
    plan_oc,
    validate_plan,
)
from .segmenter import exhaustive_segment, greedy_segment

__version__ = "0.1.0"
