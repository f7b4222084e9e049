"""Exception hierarchy shared by the library and the command-line harness."""


class SwarmGroupsError(Exception):
    """Base class for all library errors."""


class DimensionError(SwarmGroupsError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class InputError(SwarmGroupsError, ValueError):
    """Arguments violate an operation's preconditions."""


class RangeError(InputError):
    """A requested window or index lies outside the available data."""


class ConfigError(InputError):
    """A configuration value is missing or invalid.

    ``field`` names the offending key so callers can report it.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ContractError(SwarmGroupsError, RuntimeError):
    """An internal contract was violated (e.g. differentiating a non-scalar)."""


class NumericalError(SwarmGroupsError, ArithmeticError):
    """A computation produced non-finite values."""

    def __init__(self, message: str, term: str | None = None):
        super().__init__(message)
        self.term = term
