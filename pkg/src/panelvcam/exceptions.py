"""Exception hierarchy; the CLI maps these onto exit codes."""


class PanelVCAMError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(PanelVCAMError):
    """Invalid model configuration or tuning setup (CLI exit code 1)."""


class DataError(PanelVCAMError):
    """Malformed, degenerate or insufficient input data (CLI exit code 2)."""


class NumericalError(PanelVCAMError):
    """Numerical failure such as singular normal equations (CLI exit code 3)."""
