"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4. Everything else is a plain bug.
"""


class HallmarksError(Exception):
    """Base class for all package errors."""


class ConfigError(HallmarksError):
    """Invalid configuration value or combination."""


class ShapeError(HallmarksError):
    """Tensor shapes incompatible with the requested operation."""


class GraphError(HallmarksError):
    """Autodiff misuse: non-scalar backward, detached graph, etc."""


class DataError(HallmarksError):
    """Corpus file or split manifest is malformed."""


class VocabError(HallmarksError):
    """Vocabulary construction or lookup failure."""


class DegenerateLabelsError(HallmarksError):
    """Metric undefined because only one class is present."""

    def __init__(self, present_class: int):
        self.present_class = present_class
        super().__init__(
            f"AUC undefined: every label is {present_class}; need both classes"
        )


class NumericError(HallmarksError):
    """Non-finite value encountered during training."""


class CheckpointError(HallmarksError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """Unsupported checkpoint format version."""


class CheckpointChecksumError(CheckpointError):
    """Checkpoint payload failed its CRC-32 check."""


class CheckpointTensorError(CheckpointError):
    """Required tensor missing from, or misshapen in, a checkpoint."""
