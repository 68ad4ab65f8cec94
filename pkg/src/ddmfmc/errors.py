"""Semantic exception hierarchy.

Every failure mode that callers may want to branch on gets its own class;
the CLI maps these onto exit codes.
"""


class DdmfmcError(Exception):
    """Base class for all library errors."""


# --- estimator / allocation ---

class NestednessViolation(DdmfmcError):
    """Sample allocations are not monotone nondecreasing."""


class InvalidAllocation(DdmfmcError):
    """Allocation is unusable (nonpositive high-fidelity count, budget blown)."""


class ConditionsNotMet(DdmfmcError):
    """Cost/correlation conditions for the closed-form allocation fail."""


class ModelOrderViolation(DdmfmcError):
    """Low-fidelity models are not ordered by decreasing |correlation|."""


class InvalidSpectrum(DdmfmcError):
    """Variance-reduction contributions are negative after ordering."""


class DegenerateVariance(DdmfmcError):
    """Estimator variance vanished where a ratio needs it."""


# --- sampling / special functions ---

class SeriesDiverged(DdmfmcError):
    """Hypergeometric series failed to converge within the term cap."""


class OutOfSupport(DdmfmcError):
    """Density evaluated outside (-1, 1)."""


class NonFiniteIntegrand(DdmfmcError):
    """Integrand returned a non-finite value at a quadrature node."""


class NotPositiveDefinite(DdmfmcError):
    """Matrix expected to be symmetric positive definite is not."""


class ZeroVariance(DdmfmcError):
    """A data column is constant where a correlation is required."""


# --- confidence intervals ---

class RootBracketFailure(DdmfmcError):
    """Endpoint root finder could not bracket a sign change."""


class DesignTooSmall(DdmfmcError):
    """Surrogate training design has too few points."""


class ExtrapolationRefused(DdmfmcError):
    """Query lies outside a surrogate's trained domain."""


# --- minimax adjustment ---

class CpNonConvergence(DdmfmcError):
    """CP decomposition failed to converge within the iteration cap."""


class EmptyConfidenceWindow(DdmfmcError):
    """Confidence window captured no grid column and snapping is disabled."""


# --- alpha optimization ---

class GpFitFailure(DdmfmcError):
    """GP covariance stayed non-PD through jitter escalation."""


class RiskFitFailure(DdmfmcError):
    """Pareto risk model fit is singular."""


# --- evaluation ---

class ZeroOutputVariance(DdmfmcError):
    """Sensitivity output has no variance to apportion."""


class DegenerateData(DdmfmcError):
    """Subsampled pilot data stayed degenerate after the retry cap."""
