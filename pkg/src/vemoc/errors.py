"""Exception hierarchy for the solver."""


class VemocError(Exception):
    """Base class for all solver errors."""


class DefinitionError(VemocError):
    """A problem definition or callback returned the wrong shape."""


class EvaluationError(VemocError):
    """A callback produced a non-finite value."""


class DomainError(VemocError):
    """An argument lies outside the admissible domain."""


class StaleTableError(VemocError):
    """A transition table was used with a trajectory it was not built from."""


class CyclingError(VemocError):
    """The working-set loop exceeded its pass bound."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log or []


class StepFailure(VemocError):
    """The virtual-time integrator could not take a step."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ValidationError(VemocError):
    """An input file or config does not match the expected schema."""
