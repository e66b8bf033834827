"""Exception types shared across the package."""


class ConfigError(Exception):
    """Invalid configuration file, key or CLI argument (exit code 2)."""


class NumericalError(Exception):
    """Solver or assembly failure (exit code 3)."""


class PatternOverflowError(NumericalError):
    """An assembled entry fell outside the fixed union sparsity pattern."""
