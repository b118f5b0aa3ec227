"""Exception types shared across the package."""


class ColtranError(Exception):
    """Base class so callers can catch everything from this package at once."""


class DimensionError(ColtranError):
    """Array rank/extent disagrees with what an operation requires."""


class VocabularyError(ColtranError):
    """An integer index falls outside the embedding or label vocabulary."""


class ResolutionError(ColtranError):
    """Image height/width incompatible with the configured grid or scale factor."""


class ConfigError(ColtranError):
    """A configuration value is missing, malformed, or out of its legal range."""


class CheckpointError(ColtranError):
    """Checkpoint file is corrupt or does not match the model being restored."""
