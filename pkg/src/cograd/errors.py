"""Exception types shared across the package.

Exit-code mapping used by the CLI: configuration and validation problems
(ConfigError, LayoutError, DimensionError, DataError, CsvParseError) map to
exit 2; runtime failures during a run (DivergenceError, ProbeError,
OracleError, EvaluationError, DegenerateGradientError) map to exit 3.
"""


class CogradError(Exception):
    """Base class for all package errors."""


class ConfigError(CogradError):
    """Invalid configuration value; message names the offending field."""


class LayoutError(CogradError):
    """Inconsistent parameter layout (e.g. duplicate tensor name)."""


class DimensionError(CogradError):
    """Operands with incompatible shapes or lengths."""


class DataError(CogradError):
    """Invalid dataset content (labels, rates, brackets)."""


class CsvParseError(DataError):
    """Malformed CSV row; message names the 1-based line number."""


class OracleError(CogradError):
    """A finite-difference oracle hit a non-finite evaluation."""


class EvaluationError(CogradError):
    """A model or loss evaluation produced non-finite values."""


class DegenerateGradientError(CogradError):
    """A gradient-modification step requires a nonzero norm it did not get."""


class UndefinedMetricError(CogradError):
    """Metric undefined for the given labels (e.g. single-class AUC)."""


class ProbeError(CogradError):
    """The harmonization probe failed to converge."""


class DivergenceError(CogradError):
    """Training produced a non-finite loss; message names the step."""
