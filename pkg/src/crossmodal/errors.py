"""Exception taxonomy shared across the package.

The CLI maps these onto distinct exit codes, so library code should raise
the most specific class that applies.
"""


class CrossmodalError(Exception):
    """Base class for all package errors."""


class ConfigError(CrossmodalError):
    """Invalid or inconsistent configuration values."""


class DataError(CrossmodalError):
    """Problems with datasets, manifests, or serialized artifacts."""


class FeatureFormatError(DataError):
    """Malformed binary feature or representation file."""


class ManifestError(DataError):
    """Malformed or inconsistent dataset manifest."""


class CheckpointError(DataError):
    """Malformed, truncated, or incompatible checkpoint file."""


class DimensionError(CrossmodalError):
    """Shape or dimension mismatch in a numeric operation."""


class ContractError(CrossmodalError):
    """A runtime contract was violated (e.g. fully masked attention row)."""


class NumericsError(CrossmodalError):
    """Non-finite values appeared where finite values are required."""
