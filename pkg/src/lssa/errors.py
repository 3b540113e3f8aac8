"""Exception types shared across the package."""


class LssaError(Exception):
    """Base class for all package errors."""


class ShapeError(LssaError, ValueError):
    pass


class ConfigError(LssaError, ValueError):
    pass


class CheckpointError(LssaError):
    pass


class StateError(LssaError, RuntimeError):
    pass


class DegenerateInputError(LssaError, ValueError):
    pass


class DesyncError(LssaError):
    """Observed stego token cannot be produced by the reconstructed pool.

    Usually means extraction runs with a different LM, codec or partition
    seed than embedding did.
    """


class StageError(LssaError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
