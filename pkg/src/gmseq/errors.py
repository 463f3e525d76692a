"""Exception taxonomy shared across the package.

The CLI maps these onto distinct exit codes: configuration problems (2),
data/file problems (3), numeric failures (4).
"""


class GmseqError(Exception):
    """Base class for package errors."""


class ConfigError(GmseqError):
    """Invalid configuration: schema violations, missing files, bad guards."""


class DataError(GmseqError):
    """Malformed input data (CSV shape, encoding, missing columns)."""


class NumericError(GmseqError):
    """Numeric failure: divergent integrals, singular systems, bad targets."""
