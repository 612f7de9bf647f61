"""Exception hierarchy shared by all hoferlab modules."""


class HoferLabError(Exception):
    """Base class for all errors raised by this package."""


# --- expression DSL ---------------------------------------------------------

class ExprSyntaxError(HoferLabError):
    """Source text does not conform to the expression grammar."""

    def __init__(self, message, position=None, expected=None):
        super().__init__(message)
        self.position = position
        self.expected = tuple(sorted(expected)) if expected else ()


class UnknownVariable(HoferLabError):
    """A variable name is not admitted by the target chart."""


class UnguardedDivision(HoferLabError):
    """A denominator could not be certified positive on the declared domain."""


class DomainError(HoferLabError):
    """Evaluation left the declared domain (division guard, sqrt of negative)."""


# --- surfaces / flows -------------------------------------------------------

class AmbiguousLift(HoferLabError):
    """Consecutive samples too far apart to lift continuously to the cover."""


class NonConvergence(HoferLabError):
    """Quadrature failed to meet its error target; partial value attached."""

    def __init__(self, message, value=None, error=None):
        super().__init__(message)
        self.value = value
        self.error = error


class StepUnderflow(HoferLabError):
    """Adaptive integrator step size collapsed below the representable floor."""


class NotFixed(HoferLabError):
    """Point fails the fixed-point precondition of a linearized operation."""


# --- lengths / geodesic checks ---------------------------------------------

class ExtremumSearchUnstable(HoferLabError):
    """Global extremum estimates disagree across restart subsets."""


class NotRegular(HoferLabError):
    """Path fails the regularity precondition (max - min vanishes somewhere)."""


class MismatchedEndpoint(HoferLabError):
    """A certificate is not tied to the path it is being bracketed against."""


# --- orbit detection --------------------------------------------------------

class SectionDegenerate(HoferLabError):
    """Return section nearly tangent to the flow; retries exhausted."""


# --- capacity certificates --------------------------------------------------

class PreconditionFailed(HoferLabError):
    """A certificate precondition failed; carries an optional witness."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class ShortOrbit(PreconditionFailed):
    """A non-constant closed trajectory of period below the horizon exists."""


class ShortOrbitInK(PreconditionFailed):
    """The certifying function itself has a short closed trajectory."""


class NoGradientPath(HoferLabError):
    """Descent from the maximum failed to reach the minimum level band."""


class LevelTooShort(PreconditionFailed):
    """A level set was traversed in time < 1; embedding would self-overlap."""


class ContainmentFailed(HoferLabError):
    """Nested level containment failed; carries the violating parameters."""

    def __init__(self, message, c=None, sample=None):
        super().__init__(message)
        self.c = c
        self.sample = sample


# --- gluing / quasi-cylinders -----------------------------------------------

class EndpointMismatch(HoferLabError):
    """Time-1 maps of the two paths disagree beyond tolerance."""


class InconsistentArea(HoferLabError):
    """Fiber-disc areas disagree across sample points beyond tolerance."""

    def __init__(self, message, deviation=None):
        super().__init__(message)
        self.deviation = deviation


class NondegeneracyFailed(HoferLabError):
    """Disc restriction of the two-form fails positivity on the grid."""


class ResidualTooLarge(HoferLabError):
    """Moser step produced a pullback residual above the declared bound."""


# --- flatness ----------------------------------------------------------------

class NewtonDiverged(HoferLabError):
    """Implicit solve for the graph correspondence failed (input too large)."""


class EndpointNotFixed(HoferLabError):
    """Arc endpoints are not fixed points of the isotopy."""


# --- scenarios / io -----------------------------------------------------------

class SchemaError(HoferLabError):
    """Scenario file does not conform to the schema."""


class UnknownExperiment(HoferLabError):
    """Requested experiment name is not in the catalog."""


class IoError(HoferLabError):
    """Emission target could not be written."""
