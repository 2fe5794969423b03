"""Exception hierarchy shared across the package.

Every error raised deliberately by this library derives from
:class:`LdpDebiasError` so callers (notably the CLI) can map failures to
exit codes without matching on builtins.
"""


class LdpDebiasError(Exception):
    """Base class for all library errors."""


class BudgetError(LdpDebiasError):
    """Invalid privacy budget parameters (epsilon, delta, norm bound)."""


class BudgetMismatchError(LdpDebiasError):
    """Dataset release metadata disagrees with the budget in use."""


class OneShotError(LdpDebiasError):
    """Attempt to release the same record twice under one budget."""


class LabelError(LdpDebiasError):
    """Label outside {-1, +1} in classification mode."""


class NormBoundError(LdpDebiasError):
    """Feature vector exceeds the norm bound of its budget."""


class DimensionError(LdpDebiasError):
    """Shape mismatch between parameter vector and features."""


class SeriesOrderError(LdpDebiasError):
    """Requested series truncation order exceeds the derivative stack."""


class ModeError(LdpDebiasError):
    """Classification-mode operation applied in regression mode or vice versa."""


class DataError(LdpDebiasError):
    """Dataset-level failure: parsing, schema, empty input, bad fraction."""


class ConfigError(LdpDebiasError):
    """Invalid or inconsistent experiment configuration."""
