"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class BoxtttError(Exception):
    """Base class for all package errors."""


class ConfigError(BoxtttError):
    """Invalid configuration or command-line arguments."""


class DataError(BoxtttError):
    """Malformed dataset, prediction, or fixture files."""


class NumericalError(BoxtttError):
    """Unexpected non-finite values outside the episode abort policy."""


class ScriptError(BoxtttError):
    """A scripted backbone was queried for an unscripted context."""


class BackboneUnavailableError(BoxtttError):
    """A registered backbone requires resources this install does not ship."""
