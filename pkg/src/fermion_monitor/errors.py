"""Exception types shared across the package."""


class FermionMonitorError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(FermionMonitorError, ValueError):
    """Malformed parameters, regions, or state dimensions."""


class DegenerateStateError(FermionMonitorError):
    """Mode matrix has lost rank beyond repair (orthonormalization failed)."""


class NumericalConsistencyError(FermionMonitorError):
    """A quantity violated an exact structural property beyond tolerance."""


class ResourceLimitError(FermionMonitorError):
    """Requested computation exceeds a hard size limit (e.g. dense oracle L)."""


class BranchImpossibleError(FermionMonitorError):
    """Replay log prescribes a measurement branch of zero Born weight."""


class GaplessPointError(FermionMonitorError):
    """Non-Hermitian spectrum is gapless; steady-state correlators undefined."""


class StiffnessError(FermionMonitorError):
    """Adaptive ODE integration failed (step-size underflow or divergence)."""


class CollapseError(FermionMonitorError):
    """Finite-size collapse optimization failed to converge.

    Carries an optional ``landscape`` attribute: an array of
    ``(alpha_c, nu, residual)`` rows sampling the cost surface near the
    failed fit, for diagnostics.
    """

    def __init__(self, message, landscape=None):
        super().__init__(message)
        self.landscape = landscape


class StationarityWarning(RuntimeWarning):
    """Steady-state averaging window shows significant drift (burn-in too short)."""
