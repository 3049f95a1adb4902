"""Exception types shared across the package."""


class NoForegroundError(ValueError):
    """An operation that requires foreground voxels received an empty mask."""


class DegenerateROIError(ValueError):
    """A mapped region of interest collapsed to zero extent after clamping."""


class UndefinedMetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. single-class AUROC)."""


class ProtocolError(ValueError):
    """The evaluation protocol cannot be realized on the given dataset."""


class TransferError(RuntimeError):
    """Weight transfer between checkpoints matched nothing."""


class TrainingDivergedError(RuntimeError):
    """Training aborted because the loss became non-finite."""


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class DataError(RuntimeError):
    """Missing or inconsistent data artifacts."""


class RunFailedError(RuntimeError):
    """An experiment run failed; diagnostics are preserved in its manifest."""
