"""Exception types shared across the package."""


class InfomaxError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(InfomaxError):
    """Operand shapes are inconsistent with an operation's contract."""


class ConfigError(InfomaxError):
    """A configuration value is outside its legal range."""


class InvalidValueError(InfomaxError):
    """Numeric data violates an invariant (NaN/Inf, bad distribution)."""


class MaskError(InfomaxError):
    """An attention mask leaves a query with no visible keys."""


class VocabError(InfomaxError):
    """A calendar field is outside its embedding table's vocabulary."""


class DataError(InfomaxError):
    """A dataset file, stamp sequence, or window request is malformed."""


class TrainingError(InfomaxError):
    """Training reached a non-recoverable state, e.g. a NaN loss."""
