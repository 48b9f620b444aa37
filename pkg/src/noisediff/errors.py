"""Exception types shared across the package."""


class NoisediffError(Exception):
    """Base class for package-specific errors."""


class DegenerateDataError(NoisediffError):
    """Raised when data carry no usable signal (constant series, empty sums).

    Mapped to exit code 2 by the command line interface.
    """


class NonConvergenceError(NoisediffError):
    """Raised when no optimizer start converged within the iteration budget.

    Carries the best point found so far, so callers can inspect or reuse it.
    Mapped to exit code 3 by the command line interface.
    """

    def __init__(self, message, best_point=None, best_value=None):
        super().__init__(message)
        self.best_point = best_point
        self.best_value = best_value


class SingularBlockError(NoisediffError):
    """A per-block covariance matrix was singular or not positive definite.

    Attributes carry the offending block index and the determinant, which
    usually signals a degenerate diffusion coefficient or a parameter value
    outside the usable region.
    """

    def __init__(self, block_index, determinant, context=""):
        msg = "matrix not positive definite at block %d (det=%.6g)" % (
            block_index,
            determinant,
        )
        if context:
            msg = "%s: %s" % (context, msg)
        super().__init__(msg)
        self.block_index = block_index
        self.determinant = determinant


class SingularInformationError(NoisediffError):
    """An information-matrix block is singular; parameters look unidentifiable."""


class SimulationError(NoisediffError):
    """Non-finite drift or diffusion during path simulation.

    Carries the step index at which the blow-up occurred.
    """

    def __init__(self, message, step_index):
        super().__init__(message)
        self.step_index = step_index
