"""Exception types shared across the package."""

from __future__ import annotations


class PhysmoError(Exception):
    """Base class for all errors raised by physmo."""


class ContractViolation(PhysmoError):
    """An argument or data structure failed a documented precondition."""


class SimulationDiverged(PhysmoError):
    """The integrator produced a non-finite state.

    Carries enough context to locate the failing substep.
    """

    def __init__(self, message: str, time: float | None = None, substep: int | None = None):
        super().__init__(message)
        self.time = time
        self.substep = substep


class ExpertFailure(PhysmoError):
    """A scripted expert could not produce an acceptable rollout for a family."""

    def __init__(self, family: str, message: str):
        super().__init__(f"{family}: {message}")
        self.family = family


class TrainingDiverged(PhysmoError):
    """A loss or sample chain went non-finite; carries the offending step."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
