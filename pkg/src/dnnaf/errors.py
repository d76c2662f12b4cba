"""Exception hierarchy shared by the library and the command line.

Every exception carries the process exit status the CLI should use, so the
command line can map failures without a lookup table of its own.
"""


class DnnafError(Exception):
    exit_code = 1


class UsageError(DnnafError):
    exit_code = 2


class ParameterError(DnnafError, ValueError):
    """Invalid model, filter or experiment parameters."""

    exit_code = 2


class ConfigurationError(DnnafError):
    exit_code = 3


class DivergenceError(DnnafError):
    exit_code = 4


class TrainingDivergedError(DivergenceError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class FormatError(DnnafError):
    """A file could not be parsed; ``field`` names the offending entry."""

    exit_code = 5

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class NumericalError(DnnafError):
    exit_code = 6


class UndefinedPointError(NumericalError, ValueError):
    pass


class DegenerateSampleError(NumericalError, ValueError):
    pass


class InputError(NumericalError, ValueError):
    pass


class EstimationError(NumericalError):
    pass


class BoundUndefinedError(NumericalError):
    def __init__(self, e_ratio: float):
        super().__init__(
            f"E[p'(v)/v] = {e_ratio:.6g} is not negative; the mean-stability bound does not apply"
        )
        self.e_ratio = e_ratio


class InstabilityPredictedError(NumericalError):
    def __init__(self, denominator: float, eta: float):
        super().__init__(
            f"steady-state MSD undefined at eta={eta:.6g}: denominator {denominator:.6g} <= 0"
        )
        self.denominator = denominator
        self.eta = eta


class NotConvergedError(NumericalError):
    pass
