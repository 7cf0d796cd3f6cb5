"""Exception types shared across the package."""


class CoalCoagError(Exception):
    """Base class for all package errors."""


class NonPrimitiveMatrixError(CoalCoagError):
    """Migration matrix is not primitive (off-diagonal support not irreducible)."""


class InconsistentCountsError(CoalCoagError):
    """Initial block counts do not sum to the sample size."""


class NonPositiveRateError(CoalCoagError):
    """A rate parameter that must be positive is not."""


class NonPositiveLambdaError(CoalCoagError):
    """Laplace argument must be strictly positive componentwise."""


class AbsorbedError(CoalCoagError):
    """No transition has positive rate; the chain is stuck."""


class TooFewBlocksError(CoalCoagError):
    """Rate sandwich requires strictly more blocks than colonies."""


class StepTooLargeError(CoalCoagError):
    """Fixed-step integration produced values below the negativity floor."""


class ZeroBetaError(CoalCoagError):
    """Sampling fractions must be strictly positive for this operation."""


class RepresentationInvalidError(CoalCoagError):
    """Branching representation requires nonnegative death rates."""


class InsufficientSamplesError(CoalCoagError):
    """Monte Carlo estimate requested with no samples."""


class ExplosionGuardError(CoalCoagError):
    """Branching population exceeded the hard cap; parameters look supercritical."""
