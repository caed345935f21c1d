"""Exception taxonomy shared by every engine component."""


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class BoundsError(EngineError):
    """Coordinate or range outside the declared extent."""


class CapacityError(EngineError):
    """Buffer pool could not free enough space."""

    def __init__(self, msg: str, freed: int = 0):
        super().__init__(msg)
        self.freed = freed


class TooLargeError(EngineError):
    """Object larger than the whole pool (or its owner quota)."""


class NotFoundError(EngineError):
    """Unknown id / dataset name."""


class DuplicateCellError(EngineError):
    """Two cells written at the same coordinate of one tile."""


class ShapeError(EngineError):
    """Array operands with incompatible sizes or tile grids."""


class TypeMismatchError(EngineError):
    """Value of the wrong type for a predicate, aggregate or conversion."""


class PathError(EngineError):
    """Malformed or unresolvable dotted path."""


class PlanError(EngineError):
    """Structurally invalid plan or unresolved alias."""


class BindingError(EngineError):
    """Dimension binding produced a non-integer or negative value."""


class OutputSpecError(EngineError):
    """Join output spec inconsistent with the requested model."""


class ConfigError(EngineError):
    """Inconsistent benchmark or engine configuration."""


class InternalError(EngineError):
    """Invariant breach; indicates a bug, not a user error."""


class ScriptError(EngineError):
    """Query-script parse or bind failure, with source position."""

    def __init__(self, msg: str, line: int = 0, col: int = 0):
        if line:
            msg = f"line {line}, col {col}: {msg}"
        elif col:
            msg = f"col {col}: {msg}"
        super().__init__(msg)
        self.line = line
        self.col = col
