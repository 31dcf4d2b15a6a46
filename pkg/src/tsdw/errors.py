"""Exception types shared across the package."""


class FormatError(ValueError):
    """A binary file does not conform to the expected layout."""


class DimensionError(ValueError):
    """Vector or matrix shapes do not agree."""


class TapeError(ValueError):
    """A backward pass received a tape that does not match the network."""


class SamplingError(ValueError):
    """A batch cannot be assembled from the available identities."""


class ConfigError(ValueError):
    """A configuration value is out of its legal range."""


class EvalError(ValueError):
    """An evaluation run has no valid queries."""


class NumericsError(ArithmeticError):
    """Training produced a non-finite value; carries diagnostics."""
