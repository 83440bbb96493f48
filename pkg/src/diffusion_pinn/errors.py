"""Exception types raised across the package."""


class DivergenceError(RuntimeError):
    """A chain, training run or sampler produced non-finite values."""

    def __init__(self, message, *, step=None, last_params=None):
        super().__init__(message)
        self.step = step
        self.last_params = last_params


class CheckpointError(ValueError):
    """A checkpoint file is malformed or incompatible with the request."""


class ConfigError(ValueError):
    """An experiment config failed validation; the message names the field path."""


class UnsupportedTargetError(ValueError):
    """The requested operation needs an analytic oracle the target lacks."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message, achieved):
        super().__init__(message)
        self.achieved = achieved
