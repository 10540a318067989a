"""Certified proximal minimum-flow solver for doubly nonlinear evolution equations."""

from . import dualnorm, grid, nonlinearity, oracle, saddle, stepper
from ._kernels import HAVE_COMPILED, default_backend
from .errors import (
    CFLViolation,
    InfeasibleDomain,
    InvalidSpec,
    MinflowError,
    NewtonStall,
    NotConverged,
    SingularSystem,
    SizeMismatch,
    StepFailure,
    UnsupportedEntry,
    ValidationFailure,
)

__version__ = "0.1.0"
