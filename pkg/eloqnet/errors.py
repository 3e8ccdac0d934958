"""
Exception hierarchy for eloqnet.

Library code raises these; only the CLI turns them into exit codes.
"""


class EloqnetError(Exception):
    """Base class for every error raised by eloqnet."""

    exit_code = 3
    kind = "error"


class ConfigError(EloqnetError):
    """Invalid configuration, input file or usage."""

    exit_code = 2
    kind = "config"


class DimensionError(ConfigError, ValueError):
    """Shapes of two operands do not agree."""

    kind = "dimension"


class InputTooShortError(ConfigError):
    """Time series has fewer frames than one window."""

    kind = "input-too-short"


class MaskError(ConfigError):
    """Tumor mask index out of range."""

    kind = "mask"


class LabelError(ConfigError):
    """Label matrix is not one-hot or disagrees with the mask."""

    kind = "label"


class EmptySupervisionError(ConfigError):
    """No task carries labels."""

    kind = "empty-supervision"


class FormatError(ConfigError):
    """A patient, checkpoint or config file could not be parsed."""

    kind = "format"


class NumericError(EloqnetError, ArithmeticError):
    """Runtime numerical failure."""

    exit_code = 3
    kind = "numeric"


class DegenerateRegionError(NumericError):
    """A region has zero variance inside a window."""

    kind = "degenerate-region"

    def __init__(self, region: int, window: int | None = None):
        self.region = region
        self.window = window
        where = f" in window {window}" if window is not None else ""
        super().__init__(f"Region {region} has zero variance{where}")


class GraphError(NumericError):
    """Misuse of a compute graph, e.g. running backward twice."""

    kind = "graph"


class GradientCheckError(NumericError):
    """The function under a gradient check produced a non-finite value."""

    kind = "gradient-check"


class DivergenceError(NumericError):
    """A non-finite gradient reached the optimizer."""

    kind = "divergence"

    def __init__(self, parameter: str):
        self.parameter = parameter
        super().__init__(f"Non-finite gradient for parameter '{parameter}'")
