"""Exception types raised across the package."""


class DiscTeachError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(DiscTeachError, ValueError):
    """Invalid configuration value."""


class SchemaMismatchError(DiscTeachError, ValueError):
    """Two values that must share a schema do not."""


class FlipError(DiscTeachError, ValueError):
    """A bit flip is inconsistent with the bits it is applied to."""


class EncodingModeError(DiscTeachError, ValueError):
    """An operation would violate the schema's encoding mode."""


class DatasetParseError(DiscTeachError, ValueError):
    """A dataset file is malformed; message names the offending record."""


class LabelError(DiscTeachError, ValueError):
    """A class label is outside [0, num_classes)."""


class TrainingError(DiscTeachError, RuntimeError):
    """Training could not run or produced unusable parameters."""


class DivergenceError(TrainingError):
    """Loss became non-finite during training."""

    def __init__(self, epoch: int):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


class SelectionError(DiscTeachError, ValueError):
    """Base-sample selection cannot satisfy the request."""


class CombineError(DiscTeachError, ValueError):
    """Dataset combination failed (e.g. replacement id missing)."""


class DegenerateObjectiveError(DiscTeachError, RuntimeError):
    """An optimisation objective is undefined for the given inputs."""


class MetricError(DiscTeachError, ValueError):
    """A metric was requested over an empty or inconsistent group."""


class PlanError(DiscTeachError, ValueError):
    """An experiment plan file is invalid."""
