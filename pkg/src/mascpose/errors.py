"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: usage/parameter problems exit 1,
numeric faults exit 2, I/O and file-format problems exit 3.
"""


class MascError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(MascError):
    """Operand shapes are incompatible for the requested operation."""


class AxisError(MascError):
    """An axis argument is out of range for the given tensor."""


class ParameterError(MascError):
    """A hyperparameter or argument value violates its contract."""


class ContractError(MascError):
    """An API was used outside its contract (e.g. backward on a non-scalar)."""


class NumericError(MascError):
    """A non-finite value was produced where finite values are required."""


class GenerationError(MascError):
    """Synthetic data generation hit an invalid geometric configuration."""


class FileFormatError(MascError):
    """A serialized file is malformed, truncated, or has the wrong version."""
