"""Exception types shared across the package."""
from __future__ import annotations

import numpy as np


class PcmpcError(Exception):
    """Base class for all package errors."""


class LayoutError(PcmpcError):
    """Dimension or block-layout mismatch in a decision vector or trajectory."""


class EvaluationError(PcmpcError):
    """A model or cost evaluation produced a non-finite result.

    Carries the offending point so failed closed-loop runs can be replayed.
    """

    def __init__(self, message: str, x=None, u=None):
        super().__init__(message)
        self.x = None if x is None else np.asarray(x)
        self.u = None if u is None else np.asarray(u)


class DomainError(EvaluationError):
    """Model evaluated outside its physical domain (e.g. nonpositive temperature)."""


class SolverError(PcmpcError):
    """Base class for failures inside the optimization loop."""


class SingularKktError(SolverError):
    """The KKT matrix is singular to working precision.

    No automatic regularization is applied; the condition estimate is attached
    so callers can decide whether to retry with jitter.
    """

    def __init__(self, message: str, condition_estimate: float = float("inf")):
        super().__init__(message)
        self.condition_estimate = condition_estimate


class LinearSolveError(SolverError):
    """Factor-and-solve failed its residual contract."""


class DivergenceError(SolverError):
    """An iterate went non-finite; the last finite iterate is attached."""

    def __init__(self, message: str, last_iterate=None):
        super().__init__(message)
        self.last_iterate = None if last_iterate is None else np.asarray(last_iterate)


class ColdStartError(SolverError):
    """The offline solve for the initial problem did not converge.

    Attaches the best iterate found and its gradient norm.
    """

    def __init__(self, message: str, best_iterate=None, best_norm: float = float("inf")):
        super().__init__(message)
        self.best_iterate = None if best_iterate is None else np.asarray(best_iterate)
        self.best_norm = best_norm


class ConfigError(PcmpcError):
    """Experiment configuration could not be parsed or validated."""
