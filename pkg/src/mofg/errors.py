"""Exception hierarchy. Every error the package raises derives from MofgError."""


class MofgError(Exception):
    pass


class DimensionError(MofgError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(MofgError, ValueError):
    """A configuration value or setting is invalid."""


class ValidationError(MofgError, ValueError):
    """Input data violates an operation's precondition."""


class ContractError(MofgError, RuntimeError):
    """An internal invariant would be broken (e.g. an attention row with no keys)."""


class FormatError(MofgError, ValueError):
    """A checkpoint or data file is malformed."""


class DataParseError(FormatError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class TransportError(MofgError, RuntimeError):
    """A remote judge could not be reached or replied with garbage."""
