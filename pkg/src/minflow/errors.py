"""Exception hierarchy shared by all modules."""


class MinflowError(Exception):
    """Base class for package errors."""


class ValidationFailure(MinflowError):
    """A structural assumption on (beta, F, p) is violated.

    Attributes
    ----------
    assumption : str
        Label of the violated hypothesis, e.g. ``"flux-growth"``.
    witness : object
        Sample point at which the violation was observed.
    """

    def __init__(self, assumption, message, witness=None):
        super().__init__(f"{assumption}: {message} (witness={witness!r})")
        self.assumption = assumption
        self.witness = witness


class InvalidSpec(MinflowError):
    pass


class SizeMismatch(MinflowError):
    pass


class CFLViolation(MinflowError):
    pass


class InfeasibleDomain(MinflowError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class UnsupportedEntry(MinflowError):
    pass


class SingularSystem(MinflowError):
    pass


class NotConverged(MinflowError):
    """Iteration budget exhausted before the certificate reached tolerance.

    The last iterate is attached as ``solution`` and the residual history
    as ``history`` so callers can inspect or resume.
    """

    def __init__(self, message, solution=None, history=None):
        super().__init__(message)
        self.solution = solution
        self.history = history if history is not None else []


class NewtonStall(MinflowError):
    pass


class StepFailure(MinflowError):
    def __init__(self, message, step=None, trajectory=None, cause=None):
        super().__init__(message)
        self.step = step
        self.trajectory = trajectory
        self.cause = cause
