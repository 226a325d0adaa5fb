"""Exception hierarchy shared across the package."""


class SlotCarryError(Exception):
    """Base class for all errors raised by this package."""


class CorpusError(SlotCarryError):
    """Malformed corpus file or violated dialog invariant."""


class EmbeddingError(SlotCarryError):
    """Malformed embedding file or failed embedding lookup contract."""


class ConfigError(SlotCarryError):
    """Inconsistent configuration, e.g. mismatched dimensions."""


class TrainingError(SlotCarryError):
    """Training aborted, e.g. non-finite loss."""
