"""Exception hierarchy shared across the package.

Every error carries an ``exit_code`` so the CLI can map failures to stable
process exit statuses.
"""


class SmoeaError(Exception):
    exit_code = 7


class ArgumentError(SmoeaError):
    """Invalid argument value (bad fraction, bad config field)."""
    exit_code = 2


class ShapeError(SmoeaError):
    """Tensor shapes do not compose."""
    exit_code = 7


class GeometryError(SmoeaError):
    """Layer geometry is invalid (non-integer output size, odd pool input)."""
    exit_code = 7


class LabelError(SmoeaError):
    """Class label outside the valid range."""
    exit_code = 7


class MaskError(SmoeaError):
    """Filter mask is malformed or infeasible (wrong length, all zeros)."""
    exit_code = 7


class UnknownLayerError(SmoeaError):
    """Conv ordinal does not name a layer of the network."""
    exit_code = 5


class ModelFormatError(SmoeaError):
    """Model directory is corrupt (bad manifest, truncated blob)."""
    exit_code = 4


class DataFormatError(SmoeaError):
    """Dataset file is corrupt (bad framing, bad label byte)."""
    exit_code = 3


class DataError(SmoeaError):
    """Dataset is unusable (empty split)."""
    exit_code = 3


class PlanError(SmoeaError):
    """Group plan does not fit the network."""
    exit_code = 6


class EvolutionError(SmoeaError):
    """Evolution cannot proceed (infeasible bounds, degenerate elites, empty front)."""
    exit_code = 7
