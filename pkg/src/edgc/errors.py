"""Exception types shared across the package."""


class EdgcError(Exception):
    """Base class for package-specific failures."""


class DegenerateInputError(EdgcError, ValueError):
    """Input has no usable variation (zero variance, zero range, empty window)."""


class TraceFormatError(EdgcError, ValueError):
    """Gradient trace file is malformed or truncated."""


class CalibrationError(EdgcError, ValueError):
    """Communication-model fit is impossible for the given measurements."""


class CompressionInfeasibleError(EdgcError, RuntimeError):
    """No rank >= 1 beats uncompressed transfer; compression should be disabled."""


class DivergenceError(EdgcError, RuntimeError):
    """Training produced a non-finite loss or gradient."""


class ConfigError(EdgcError, ValueError):
    """Run configuration is missing keys, has unknown keys, or bad values."""
