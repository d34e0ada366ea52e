"""Exception types shared across the simulator."""


class SemlinkError(Exception):
    """Base class for all simulator errors."""


class ShapeError(SemlinkError, ValueError):
    """Operands have incompatible dimensions."""


class ConfigError(SemlinkError, ValueError):
    """A configuration value is invalid or inconsistent."""


class ContractError(SemlinkError, ValueError):
    """An operation was called outside its contract (bad indices, reused
    graph, non-scalar loss, ...)."""


class NonFiniteError(SemlinkError, ArithmeticError):
    """A tensor would contain NaN or Inf."""


class VocabularyError(SemlinkError, ValueError):
    """A text label is not in the closed scene vocabulary."""


class ParseError(SemlinkError, ValueError):
    """An on-disk artifact (image, sidecar, config, checkpoint) is malformed."""


class NumericError(SemlinkError, ArithmeticError):
    """A numerical routine failed beyond recoverable tolerance."""


class TrainingDiverged(SemlinkError, RuntimeError):
    """Training loss became non-finite; the run was aborted."""
