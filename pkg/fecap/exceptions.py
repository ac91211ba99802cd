"""
Error types raised by the simulator.

Management commands map these onto process exit codes:
ConfigError -> 1, NumericalError / WaveformError -> 2.
"""


class FecapError(Exception):
    """Base class for all simulator errors"""


class ConfigError(FecapError):
    """Raised for malformed or semantically invalid configuration.

    Attributes:
        key: Optional name of the offending configuration key.
        line: Optional 1-based line number in the configuration text.
        column: Optional 1-based column number in the configuration text.
    """
    def __init__(self, message, key=None, line=None, column=None):
        self.reason = message
        self.key = key
        self.line = line
        self.column = column
        location = []
        if line is not None:
            location.append(f"line {line}")
        if column is not None:
            location.append(f"column {column}")
        if key:
            location.append(f"key '{key}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)


class NumericalError(FecapError):
    """Raised when a numerical procedure fails"""


class IntegratorError(NumericalError):
    """Raised when the gradient-flow integrator underflows its step size or exhausts its budget"""


class WaveformError(FecapError, ValueError):
    """Raised for non-finite or discontinuous waveforms and misaligned traces"""
