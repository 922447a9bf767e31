"""Exception types; the CLI maps each to an exit code."""


class GammaRankError(Exception):
    exit_code = 1


class InputError(GammaRankError, ValueError):
    """Malformed or invalid input data, layouts, structures or parameters."""

    exit_code = 2


class NumericalError(GammaRankError, ArithmeticError):
    """A computation produced a non-finite or otherwise unusable value."""

    exit_code = 3


class ConfigError(GammaRankError, ValueError):
    """Inconsistent or incomplete run configuration."""

    exit_code = 4
