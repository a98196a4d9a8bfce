"""Exception types shared across the package.

Every error that a CLI subcommand can hit maps onto exit code 1
(validation) or 2 (numerical failure); see cli.py.
"""


class ErayError(Exception):
    """Base class for all package errors."""


class ValidationError(ErayError):
    """Bad input: config, file format, precondition on arguments."""


class NumericalError(ErayError):
    """A computation failed or a measured quantity violates its contract."""


# -- geometry ----------------------------------------------------------------

class DegenerateMetricError(NumericalError):
    """Metric not positive definite at a queried point."""


class ConeViolationError(ValidationError):
    """Direction outside the admissible near-tangent cone."""


class ConvexityLostError(NumericalError):
    """Measured convexity constant is non-positive."""


class RegionEscapeError(NumericalError):
    """The lens region is not compactly contained in the holding box."""


# -- flow --------------------------------------------------------------------

class BlowUpError(NumericalError):
    """Velocity grew past the rescaling tolerance while tracing."""


class StencilRangeError(ValidationError):
    """Finite-difference stencil does not fit inside the traced range."""


class ConfinementViolationError(NumericalError):
    """A curve left the half-space it was supposed to be confined to."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NoConnectionError(NumericalError):
    """Two-point solve did not converge inside the validated neighborhood."""


class AlphaPositivityError(NumericalError):
    """Convexity function alpha is not bounded below by a positive constant."""


# -- transform / operators ---------------------------------------------------

class InsufficientResolutionError(ValidationError):
    """Requested family grid too coarse to be meaningful."""


class NearFaceError(ValidationError):
    """Evaluation of A requested too close to the face x = 0."""


class WeightOverflowError(NumericalError):
    """exp(F/x) * f overflowed; input is not in the weighted class."""


class InvalidDataError(ValidationError):
    """NaN/Inf encountered in grid data."""


# -- symbol analysis ----------------------------------------------------------

class OnDiagonalError(ValidationError):
    """Boundary kernel evaluated at Y = 0."""


class AliasingError(ValidationError):
    """Requested frequency beyond the Nyquist limit of the grid."""


class EllipticityFailureError(NumericalError):
    """Ellipticity margin non-positive at some frequency."""

    def __init__(self, message, freq=None, report=None):
        super().__init__(message)
        self.freq = freq
        self.report = report


# -- inversion ----------------------------------------------------------------

class NonConvergenceError(NumericalError):
    """Iterative solve stagnated above tolerance."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class ScheduleInvalidError(ValidationError):
    """A foliation level fails the strict convexity requirement."""


# -- io / config ---------------------------------------------------------------

class ConfigError(ValidationError):
    """Config text failed validation; carries the full error list."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class FileFormatError(ValidationError):
    """Magic/version/shape mismatch or truncated binary file."""
