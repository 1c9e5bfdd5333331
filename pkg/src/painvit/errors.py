"""Exception hierarchy shared by every painvit module."""


class PainVitError(Exception):
    """Base class for all errors raised by painvit."""


class DimensionError(PainVitError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(PainVitError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(PainVitError, ValueError):
    """Invalid experiment, data or optimizer configuration."""


class ValidationError(PainVitError, ValueError):
    """Input data failed a consistency check."""


class FormatError(PainVitError, ValueError):
    """A file does not follow the expected binary or text layout."""


class UndefinedMetricError(PainVitError, ValueError):
    """A metric is undefined for the given labels (e.g. AUC with one class)."""


class TruncatedFileError(PainVitError, OSError):
    """A file ended before all declared content was read."""
