"""Exception hierarchy shared across the package.

Every error raised on a user-facing path derives from SurvBayesError so the
CLI can map failure classes to exit codes without string matching.
"""


class SurvBayesError(Exception):
    """Base class for all package errors."""


class DataError(SurvBayesError):
    """Malformed or degenerate input data (bad CSV rows, no events, ...)."""


class ConfigError(SurvBayesError):
    """Invalid configuration: bad prior values, partitions, CLI/TOML fields."""


class ModelError(SurvBayesError):
    """A model cannot be fit on this data (non-finite MLE, empty arm, ...)."""


class ConvergenceError(SurvBayesError):
    """An iterative routine failed to converge within its budget."""
