"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 1, data and
format problems exit 2, numerical failures exit 3.
"""


class FinnError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(FinnError):
    """Invalid configuration value, flag, or argument."""


class ShapeError(FinnError):
    """Array shapes inconsistent with the declared contract."""


class DomainError(FinnError):
    """Input outside the mathematical domain of an operation."""


class DataFormatError(FinnError):
    """Malformed or inconsistent persisted data (datasets, checkpoints, configs)."""


class TapeError(FinnError):
    """Misuse of the autodiff tape (bad node id, non-scalar output)."""


class NumericalError(FinnError):
    """Base class for runtime numerical failures."""


class DivergenceError(NumericalError):
    """Integration produced a non-finite or out-of-bounds state.

    Carries the index of the offending step when known.
    """

    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message)
        self.step_index = step_index


class StiffnessError(NumericalError):
    """Adaptive integrator step size underflowed.

    Carries the time at which the controller gave up.
    """

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class SimulationError(NumericalError):
    """Ground-truth simulation failed; wraps the integrator diagnostic."""


class TrainingError(NumericalError):
    """Training aborted (divergent rollout or non-finite loss).

    Carries the epoch at which training failed.
    """

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
