class NMFRankError(Exception):
    """Base class for all errors raised by nmfrank."""


class DataError(NMFRankError, ValueError):
    """Input matrix could not be parsed or violates the data contract."""


class ConfigError(NMFRankError, ValueError):
    """Inconsistent selection or fit configuration."""


class FitError(NMFRankError, ArithmeticError):
    """A factorization produced a non-finite objective."""


class DeconvolutionError(NMFRankError, ValueError):
    """Deconvolution inputs are degenerate."""
