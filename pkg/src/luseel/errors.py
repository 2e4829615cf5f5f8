"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid sizes, shapes or settings."""


class InputError(ValueError):
    """A caller-supplied value violates an operation's precondition."""


class DegenerateInputError(ValueError):
    """Silent or otherwise unusable audio; the scene must be resampled."""


class DataError(RuntimeError):
    """Missing or malformed on-disk data (corpus, HRIR set, sidecar)."""


class ProviderError(RuntimeError):
    """The requested text embedding provider cannot serve the prompt."""


class NumericError(RuntimeError):
    """Non-finite activations or losses."""


class MetricUndefinedError(ValueError):
    """A metric is undefined for the given reference (e.g. silent reference)."""
