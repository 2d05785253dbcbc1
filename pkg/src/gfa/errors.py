"""Exception and warning types shared across the package."""


class GFAError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GFAError, ValueError):
    """Invalid options or configuration."""


class DataError(GFAError, ValueError):
    """Input data violates a shape or content requirement."""


class NumericalError(GFAError, ArithmeticError):
    """The sampler produced non-finite values or lost all components."""


class ComplexityWarning(UserWarning):
    """Automatic model complexity selection does not look right."""


class ConvergenceWarning(UserWarning):
    """The Geweke diagnostic did not indicate convergence."""
