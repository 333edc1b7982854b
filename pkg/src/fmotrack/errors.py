"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
ProtocolError -> 3.
"""


class FmotrackError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(FmotrackError):
    """Invalid configuration value or unknown config key."""


class DataError(FmotrackError):
    """Missing, malformed or inconsistent input/output data."""


class ProtocolError(FmotrackError):
    """External segmenter wire-protocol violation."""


class ProtocolTimeout(ProtocolError):
    """External segmenter did not answer within the handshake/request timeout."""


class NumericalError(FmotrackError):
    """A numerical invariant (e.g. SPD covariance) could not be restored."""
