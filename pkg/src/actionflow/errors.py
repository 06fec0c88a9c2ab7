"""Exception types shared across the package.

The CLI maps these onto its diagnostic prefixes: ConfigError -> CONFIG:,
ShapeError -> SHAPE:, FormatError and OSError -> IO:.
"""


class ShapeError(ValueError):
    """Tensor/layer shape contract violation."""


class ConfigError(ValueError):
    """Invalid run configuration (unknown key, missing field, bad value)."""


class FormatError(ValueError):
    """Malformed on-disk artifact (.flo file, checkpoint, dataset layout)."""
