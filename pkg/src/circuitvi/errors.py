"""Exception hierarchy shared by all circuitvi modules."""


class CircuitError(Exception):
    """Base class for every error raised by circuitvi."""


class NetlistError(CircuitError):
    """Malformed or invalid netlist document."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


class TopologyError(CircuitError):
    """The circuit graph does not admit the requested construction."""


class GateError(CircuitError):
    """A scheme's iteration matrix is numerically singular at the given step."""

    def __init__(self, message, nullity=None):
        self.nullity = nullity
        super().__init__(message)


class InconsistentStateError(CircuitError):
    """Initial data violates the Kirchhoff current law."""


class DivergenceError(CircuitError):
    """A simulation produced non-finite values."""

    def __init__(self, message, step=None):
        self.step = step
        super().__init__(message)


class ConfigError(CircuitError):
    """Invalid integrator, ensemble or FLAVOR configuration."""


class SpectrumError(CircuitError):
    """Spectral analysis could not be carried out."""
