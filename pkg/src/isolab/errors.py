"""Exception hierarchy shared by all isolab modules."""


class IsolabError(Exception):
    """Base class for every error raised by the laboratory."""


class ConfigError(IsolabError):
    pass


class DimensionError(IsolabError, ValueError):
    pass


class DegenerateInputError(IsolabError, ValueError):
    pass


class ResolutionError(IsolabError, ValueError):
    pass


class PreconditionError(IsolabError, ValueError):
    pass


class ConstraintError(IsolabError, ValueError):
    pass


class EmptyInterfaceError(IsolabError):
    pass


class ClassificationError(IsolabError):
    pass


class InvariantViolation(IsolabError, AssertionError):
    pass


class SolverError(IsolabError, RuntimeError):
    """A numerical solver failed to converge.

    ``state`` carries whatever the solver had when it gave up (last iterate,
    residual history, ...), so callers can inspect or persist it.
    """

    def __init__(self, message, **state):
        super().__init__(message)
        self.state = state


class QuadratureError(SolverError):
    pass
