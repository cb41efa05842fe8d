"""Exception hierarchy shared across the package."""


class DbarCurveError(Exception):
    """Base class for all library-specific failures."""


class CurveError(DbarCurveError):
    pass


class SingularCurve(CurveError):
    """The gradient of the defining polynomial vanishes on the curve."""


class InfinityTangency(CurveError):
    """The leading form has a repeated or vertical projective root."""


class NonSimpleRamification(CurveError):
    """Second z2-derivative vanishes at a ramification point."""


class NearRamification(CurveError):
    """Two sheets are closer than the separation threshold."""


class IllConditionedGram(CurveError):
    """Quadrature Gram matrix of the form basis is numerically singular."""


class MeshError(DbarCurveError):
    pass


class RamificationCoverageFailure(MeshError):
    """Graded weight refinement near a ramification point did not converge."""


class KindMismatch(MeshError):
    """A sampled form of the wrong kind was supplied."""


class TargetOffMesh(MeshError):
    """Requested target is farther than a cell from every node."""


class FrameFailure(MeshError):
    """Both chart derivatives are below tolerance at some node."""


class SupportViolation(DbarCurveError):
    """Input form is not supported where the operator requires."""


class SolverDivergence(DbarCurveError):
    """A least-squares or linear solve exceeded its residual threshold."""


class SourceOnRamification(DbarCurveError):
    """Dirac source placed on (or too close to) the ramification set."""


class LambdaZero(DbarCurveError):
    """Spectral parameter must be nonzero."""


class MissingLaurentData(DbarCurveError):
    """Not enough end nodes to fit the Laurent tail."""


class OscillationUnderresolved(DbarCurveError):
    """e_lambda oscillates below the resolvable subsample scale."""


class CoincidentPoints(DbarCurveError):
    """Kernel evaluation requested at coincident source and target."""


class NearExceptional(DbarCurveError):
    """lambda is too close to the exceptional set E (small |Delta|)."""


class FredholmSingular(DbarCurveError):
    """Discrete Fredholm system is numerically singular."""


class QuadratureUnderresolved(DbarCurveError):
    """lambda-plane quadrature too coarse for the requested solve."""


class NoSolution(DbarCurveError):
    """Residual floor exceeded; no admissible solution found."""


class AmbiguousGauge(DbarCurveError):
    """Several sheet-assembly coefficient fits are within tolerance."""


class MuVanishes(DbarCurveError):
    """|mu| fell below threshold; cannot divide by mu."""


class NegativeSigma(DbarCurveError):
    """Recovered sqrt(conductivity) is not positive."""


class ConfigError(DbarCurveError):
    """Bad run configuration or input file."""
