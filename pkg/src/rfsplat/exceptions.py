"""Exception hierarchy shared by all modules."""


class InvalidInputError(ValueError):
    """Input violates a documented precondition."""


class DomainError(InvalidInputError):
    """A coordinate lies outside the partition domain."""

    def __init__(self, message, value=None, index=None):
        super().__init__(message)
        self.value = value
        self.index = index


class DegenerateDataError(InvalidInputError):
    """The regularized Gram matrix could not be factorized."""

    def __init__(self, message, jitter=None):
        super().__init__(message)
        self.jitter = jitter


class ParseError(InvalidInputError):
    """Malformed scan, PLY or raster input."""

    def __init__(self, message, line=None, offset=None):
        super().__init__(message)
        self.line = line
        self.offset = offset


class ConfigError(InvalidInputError):
    """Unknown or out-of-range run configuration key."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class DegenerateFitWarning(UserWarning):
    """Emitted when hyperparameter search is skipped for lack of data."""


class EmptyCloudWarning(UserWarning):
    """Emitted when variance filtering leaves no points."""
