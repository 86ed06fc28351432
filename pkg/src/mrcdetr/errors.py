"""Exception hierarchy shared by every subpackage."""


class MrcError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(MrcError, ValueError):
    """An operation was called with inputs that break its shape contract."""


class ConfigError(MrcError, ValueError):
    """A block or experiment configuration is invalid."""


class TapeError(MrcError, RuntimeError):
    """Misuse of an op tape (for example a second backward pass)."""


class ManifestError(MrcError, ValueError):
    """A dataset manifest line failed to parse or validate."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class OptimizerError(MrcError, FloatingPointError):
    """Non-finite gradient encountered during an optimizer step."""
