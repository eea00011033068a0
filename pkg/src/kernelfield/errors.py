"""Exception types shared across the package."""


class UnsupportedOperatorError(Exception):
    """An observation operator is not defined for the given correlation model."""


class FactorizationError(Exception):
    """Cholesky factorization hit a non-positive pivot.

    ``pivot_index`` is the 0-based index (in the original ordering) of the
    first failing pivot.
    """

    def __init__(self, pivot_index, message=None):
        self.pivot_index = pivot_index
        super().__init__(message or f"matrix not positive definite at pivot {pivot_index}")


class EstimationError(Exception):
    """Parameter estimation failed (singular normalizer, missing data, ...)."""


class ConfigError(Exception):
    """Invalid run or model configuration."""


class ObservationParseError(Exception):
    """Malformed observation file. ``line`` is the 1-based offending line number."""

    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")
