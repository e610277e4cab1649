"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ArgumentError(ValueError):
    """An argument value is outside its allowed range."""


class ContractError(RuntimeError):
    """A caller violated an operation's precondition."""


class StateError(RuntimeError):
    """An object is not in a state that permits the operation."""


class DataError(ValueError):
    """Input data is malformed (e.g. label id out of range)."""


class FormatError(ValueError):
    """A file does not match the expected on-disk format."""


class TrainingDivergedError(RuntimeError):
    """A loss became non-finite during training."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
