"""Exception types shared across the package."""


class BidvolError(Exception):
    """Base class for all package-specific errors."""


class ParseError(BidvolError):
    """A file could not be parsed; message carries the offending line."""


class ValidationError(BidvolError):
    """Input values violate a documented invariant."""


class CoverageError(BidvolError):
    """Candle data does not cover a requested round window."""


class EstimationError(BidvolError):
    """A fit cannot be computed (e.g. all rows censored)."""


class ConfigError(BidvolError):
    """A run or simulation configuration is invalid."""
