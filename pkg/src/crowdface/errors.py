"""Exception types shared across the package."""


class CrowdfaceError(Exception):
    """Base class for all errors raised by this package."""


class RecordRejectedError(CrowdfaceError):
    """A rating record failed validation (names the offending record)."""

    def __init__(self, message, image_id=None, rater_id=None):
        super().__init__(message)
        self.image_id = image_id
        self.rater_id = rater_id


class DuplicateRatingError(CrowdfaceError):
    """The same (image, rater, trait) appeared more than once in a batch."""

    def __init__(self, message, duplicates=()):
        super().__init__(message)
        self.duplicates = list(duplicates)


class NoDataError(CrowdfaceError):
    """An operation was asked to summarize data that is not there."""


class InsufficientDataError(CrowdfaceError):
    """Not enough overlapping data to compute a reliability estimate."""


class AlignmentError(CrowdfaceError):
    """Face alignment could not be performed (missing/degenerate landmarks)."""


class ConfigError(CrowdfaceError):
    """An architecture or occlusion configuration is infeasible."""


class DegenerateTargetsError(CrowdfaceError):
    """Training/evaluation targets are constant, so R^2 is undefined."""


class UndefinedCorrelationError(CrowdfaceError):
    """Pearson correlation is undefined (a constant input vector)."""


class ShapeMismatchError(CrowdfaceError):
    """An image's side length does not match what the model expects."""


class CheckpointError(CrowdfaceError):
    """A model checkpoint could not be written or read back."""
