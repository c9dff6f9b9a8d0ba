"""Exception hierarchy shared by every eemgrid module."""


class EEMError(Exception):
    """Base class for all eemgrid errors."""


class FeederValidationError(EEMError, ValueError):
    """Raised when a feeder description is not a valid radial tree."""


class ScenarioError(EEMError, ValueError):
    """Raised for malformed scenario inputs (traces, configs, prices)."""


class PowerFlowError(EEMError, RuntimeError):
    """Raised when the radial AC power flow cannot produce a certificate."""


class ConvergenceError(PowerFlowError):
    pass


class VoltageCollapseError(PowerFlowError):
    pass


class SolverError(EEMError, RuntimeError):
    """Raised when a conic subproblem does not reach an optimal status."""

    def __init__(self, message, status=None, slot=None):
        super().__init__(message)
        self.status = status
        self.slot = slot


class InfeasibleSlotError(SolverError):
    """Raised when a per-slot subproblem is certified infeasible."""
