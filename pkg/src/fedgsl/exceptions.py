"""Exception types shared across the package."""


class InputError(ValueError):
    """An argument violates an operation's contract."""


class ShapeError(InputError):
    """Incompatible tensor or block shapes; the message names the operation."""


class UndefinedMetricError(ValueError):
    """A metric has no defined value (e.g. homophily of an edgeless graph)."""


class NumericFaultError(ArithmeticError):
    """An operation produced NaN or Inf values."""


class UsageError(RuntimeError):
    """The API was driven in an unsupported way (detached backward, bad sweep name, ...)."""


class ProtocolError(RuntimeError):
    """Federated clients presented structurally inconsistent models."""
