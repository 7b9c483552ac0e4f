"""Exception types shared across the package."""


class SpikeKgError(Exception):
    """Base class for all package-specific errors."""


class ParseError(SpikeKgError):
    """Malformed input file; carries the offending line number."""

    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class VocabularyError(SpikeKgError):
    """Surface form or id not present in a frozen dictionary, or a
    checkpoint/dataset vocabulary mismatch."""


class ConfigError(SpikeKgError):
    """Invalid or infeasible configuration."""


class InductiveError(SpikeKgError):
    """Inductive embedding requested for a node without usable neighborhood."""


class TrainingDiverged(SpikeKgError):
    """Loss became NaN/Inf during training."""
