"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: config/usage problems exit 2, data
problems exit 3, numerical failures exit 4.
"""


class MdlProbeError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(MdlProbeError):
    """Dimension mismatch between arrays, parameters, or configs."""


class FormatError(MdlProbeError):
    """A dataset file does not parse (bad magic, version, or byte count)."""


class ConsistencyError(MdlProbeError):
    """Two inputs that must agree (lengths, label counts) do not."""


class LabelRangeError(MdlProbeError, IndexError):
    """A label falls outside {0..K-1}."""


class NumericalError(MdlProbeError):
    """Non-finite values encountered during computation."""


class ConfigError(MdlProbeError):
    """An experiment configuration is invalid or incomplete."""
