"""Exception hierarchy shared by all modules."""


class TsdaptError(Exception):
    """Base class for every error raised by this package."""


class DegenerateCovariance(TsdaptError, ArithmeticError):
    """Cholesky factorization failed even after adding the ridge."""


class NumericalFailure(TsdaptError, ArithmeticError):
    """An iterative numerical routine did not converge."""


class InvalidWeights(TsdaptError, ValueError):
    """Marginal weights are negative, non-finite or do not sum to one."""


class MissingTargetClass(TsdaptError, ValueError):
    """A class seen in the source domain has no target-domain samples."""


class MissingTransform(TsdaptError, KeyError):
    """No fitted transformation exists for a requested class."""


class EmptyClass(TsdaptError, ValueError):
    """A class has no samples to fit on."""


class InvalidLength(TsdaptError, ValueError):
    """A time series does not have the expected number of steps."""


class ConfigError(TsdaptError, ValueError):
    """Experiment configuration is malformed or inconsistent."""


class ParseError(TsdaptError, ValueError):
    """Malformed embeddings file.

    Parameters
    ----------
    message : str
        What went wrong.
    line : int
        1-based line number of the offending line.
    path : str, optional
        File being parsed, if known.
    """

    def __init__(self, message, line, path=None):
        self.line = line
        self.path = path
        where = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"{where}: {message}")
