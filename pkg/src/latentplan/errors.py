"""Exception types shared across the pipeline."""


class LatentPlanError(Exception):
    """Base class for all package errors."""


class ConfigError(LatentPlanError, ValueError):
    """Invalid or unsupported configuration value."""


class FitError(LatentPlanError, ValueError):
    """A statistic or basis could not be fitted from the given data."""


class ShapeError(LatentPlanError, ValueError):
    """Array dimensions do not match what the model or codec expects."""


class TrainingError(LatentPlanError, RuntimeError):
    """Training produced a non-finite loss or otherwise could not continue."""


class DataError(LatentPlanError, ValueError):
    """A dataset, codec or checkpoint file could not be parsed."""
