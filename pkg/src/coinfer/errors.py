"""Exception types shared across the package."""


class CoinferError(Exception):
    """Base class for all package errors."""


class ShapeError(CoinferError):
    """Shape inference failed: an extent fell below 1 or channels do not chain."""


class UnknownModel(CoinferError):
    """Requested model name is not in the zoo."""


class ParseError(CoinferError):
    """A model/cluster/plan document is malformed."""


class ValidationError(CoinferError):
    """A constructed object violates a structural invariant."""


class InfeasibleMemory(CoinferError):
    """A generated plan does not fit the cluster's per-device memory."""


class PairingError(CoinferError):
    """A designated operator pair cannot be interleaved."""


class TooLarge(CoinferError):
    """Exhaustive segmentation was asked for a model beyond the safety rail."""


class InvalidPlan(CoinferError):
    """A plan failed validation when a valid plan was required."""


class PlanExecutionError(CoinferError):
    """Simulated execution desynchronized from the plan."""
