"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ``ConfigError`` -> 2,
``DegenerateDataError`` -> 3, ``OSError`` -> 1.
"""


class NestRQError(Exception):
    pass


class ConfigError(NestRQError, ValueError):
    """Invalid or inconsistent configuration."""


class ShapeError(NestRQError, ValueError):
    """Operand dimensions do not line up."""


class InputError(NestRQError, ValueError):
    """Input data unusable (too short, wrong length, ...)."""


class DomainError(NestRQError, ValueError):
    """Mathematically undefined request, e.g. a mean over zero terms."""


class UsageError(NestRQError, RuntimeError):
    """API used out of order, e.g. a second backward over a consumed tape."""


class DegenerateDataError(NestRQError):
    """A batch or dataset yields no loss terms."""


class DegenerateBatchError(DegenerateDataError, DomainError):
    pass
