"""Exception types shared across the package."""


class JumpvelError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(JumpvelError, ValueError):
    """Operand shapes are inconsistent with the operation's contract."""


class ConfigError(JumpvelError, ValueError):
    """A configuration object violates its invariants."""


class InputError(JumpvelError, ValueError):
    """Caller-supplied data is missing, malformed, or non-finite."""


class FormatError(JumpvelError, ValueError):
    """A serialized file does not follow its container format."""


class ParseError(JumpvelError, ValueError):
    """A text file failed to parse; carries path and line number."""

    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class NumericError(JumpvelError, ArithmeticError):
    """Non-finite values or otherwise numerically invalid state."""


class ConvergenceError(JumpvelError, RuntimeError):
    """An iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message, kkt_violation):
        super().__init__(f"{message} (KKT violation {kkt_violation:.3e})")
        self.kkt_violation = kkt_violation


class RenderError(JumpvelError, RuntimeError):
    """Synthetic renderer produced geometry outside the frame."""


class EmptyClipError(JumpvelError, ValueError):
    """A frame stack with zero frames was passed where at least one is needed."""


class UndefinedCorrelationError(JumpvelError, ValueError):
    """Pearson R requested for a constant vector; the value does not exist."""
