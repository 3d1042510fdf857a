"""Exception types.

Each class carries the process exit code the command line maps it to.
"""


class MaskHashError(Exception):
    exit_code = 1
    kind = "error"


class ConfigError(MaskHashError, ValueError):
    """Invalid or missing configuration value."""

    exit_code = 2
    kind = "config"


class ContractError(MaskHashError, ValueError):
    """An argument violates an operation's precondition (shape, range)."""

    exit_code = 3
    kind = "contract"


class FormatError(MaskHashError, ValueError):
    """A file does not conform to its binary or text format."""

    exit_code = 3
    kind = "format"


class SamplingError(MaskHashError, ValueError):
    exit_code = 3
    kind = "sampling"


class SplitError(MaskHashError, ValueError):
    exit_code = 3
    kind = "split"


class NumericError(MaskHashError, ArithmeticError):
    """A non-finite value appeared in a computation."""

    exit_code = 4
    kind = "numeric"


class TrainingError(NumericError):
    kind = "training"
