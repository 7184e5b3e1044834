"""Exception hierarchy.

Validation errors (bad inputs, mismatched shapes, broken preconditions) map to
CLI exit code 1; numerical failures (indefinite spectra, singular operators,
series that do not close) map to exit code 2.
"""


class HopnetError(Exception):
    pass


class ValidationError(HopnetError):
    exit_code = 1


class NumericalError(HopnetError):
    exit_code = 2


class ConfigError(ValidationError):
    pass


class EnvelopeViolation(ValidationError):
    """|R_J(k,l)| exceeds its declared envelope a_k * b_l at some lag."""


class BadTruncation(ValidationError):
    """Spatial truncation q must satisfy 0 < q < n."""


class DimensionMismatch(ValidationError):
    pass


class LagTooLarge(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class WindowMismatch(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class EnsembleTooSmall(ValidationError):
    pass


class SpectrumNotPositive(NumericalError):
    """Sampled spectral grid has genuinely negative mass."""


class NotPSD2x2(NumericalError):
    pass


class SingularSigma(NumericalError):
    pass


class SingularOperator(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class InsufficientReplicas(NumericalError):
    pass
