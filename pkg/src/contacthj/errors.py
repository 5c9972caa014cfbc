"""Exception hierarchy shared by every stage of the laboratory."""


class ContactHJError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(ContactHJError, ValueError):
    """Non-finite or otherwise inadmissible arguments to a model evaluator."""


class NumericalError(ContactHJError, ArithmeticError):
    """An iteration failed to converge or produced non-finite values.

    ``best`` carries the best iterate reached before giving up, when one exists.
    """

    def __init__(self, message, best=None, diagnostics=None):
        super().__init__(message)
        self.best = best
        self.diagnostics = diagnostics or {}


class SolverError(NumericalError):
    """A PDE solve hit its iteration cap or diverged."""


class InvariantError(ContactHJError, AssertionError):
    """A structural identity that must hold exactly was violated."""


class ResolutionError(ContactHJError, ValueError):
    """A length scale is too small to be represented on the grid."""


class SelectionError(ContactHJError):
    """No admissible critical solution was available for selection."""


class LPError(ContactHJError):
    """Constraint assembly or modelling problem detected by the LP oracle."""


class ConfigError(ContactHJError, ValueError):
    """Experiment configuration failed to parse or validate."""


class PrerequisiteError(ContactHJError):
    """A pipeline stage was invoked before the stage it depends on."""

    def __init__(self, stage, missing):
        super().__init__(f"missing artifact {missing!r}: run the {stage!r} stage first")
        self.stage = stage
        self.missing = missing


class DegenerateMeasureError(ContactHJError, ValueError):
    """A measure has no positive mass to normalise."""
