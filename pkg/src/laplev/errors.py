"""Exception taxonomy for the evidence pipeline.

Every failure mode that callers are expected to branch on gets its own class.
The CLI maps these to distinct exit codes.
"""


class LaplevError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class InvalidParameterError(LaplevError, ValueError):
    """A function was constructed or called with out-of-range parameters."""

    exit_code = 2


class UnsupportedDimensionError(InvalidParameterError):
    """The requested dimension is not supported by this target."""

    exit_code = 2


class NumericInputError(LaplevError, ValueError):
    """Non-finite or otherwise unusable numeric input."""


class NotPositiveDefiniteError(LaplevError):
    """Cholesky breakdown. Carries the pivot index where it happened."""

    exit_code = 7

    def __init__(self, pivot_index, message=None):
        self.pivot_index = int(pivot_index)
        super().__init__(message or f"matrix not positive definite at pivot {pivot_index}")


class DegenerateProblemError(LaplevError):
    """All probe sensitivities vanished, the likelihood is constant."""

    exit_code = 6


class CenterEvaluationError(LaplevError):
    """The likelihood is not finite at the prior box center."""

    exit_code = 6


class MissingCurvatureError(LaplevError):
    """No curvature pair available where one is required."""


class NoModesFoundError(LaplevError):
    """Mode search finished with zero stuck samples.

    Carries the best sample seen so the caller can diagnose whether the
    search was close to something.
    """

    exit_code = 4

    def __init__(self, best_position, best_logl, detail=""):
        self.best_position = best_position
        self.best_logl = float(best_logl)
        msg = f"no modes found; best logl seen {self.best_logl:.6g}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NoValidMaximaError(LaplevError):
    """Every refined candidate was filtered out.

    ``reasons`` maps each filter name to the number of candidates it removed.
    """

    exit_code = 5

    def __init__(self, reasons):
        self.reasons = dict(reasons)
        super().__init__(f"all {len(self.reasons)} candidates rejected: {self.reasons}")


class HessianFailedError(LaplevError):
    """A Hessian stencil produced non-finite entries."""


class SaddleDirectionError(LaplevError):
    """Eigendecomposition of -H found a negative eigenvalue."""


class PipelineStageError(LaplevError):
    """Wrapper that tags an underlying error with the stage it occurred in."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 3)
        super().__init__(f"[{stage}] {cause}")
