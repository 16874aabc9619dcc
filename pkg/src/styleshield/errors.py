"""Exception taxonomy shared across the toolkit."""


class StyleShieldError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatchError(StyleShieldError):
    """Image or tensor dimensions incompatible with the backbone."""


class TimestepRangeError(StyleShieldError):
    """Requested diffusion timestep outside [0, T)."""


class CaptureUnsupportedError(StyleShieldError):
    """Attention capture requested on a backbone without instrumentation."""


class UnknownLayerError(StyleShieldError):
    """A cross-attention layer id not enumerated by the backbone."""


class PhraseNotFoundError(StyleShieldError):
    """A probe phrase does not tokenize to a span inside the prompt."""


class OverlappingSpansError(StyleShieldError):
    """Style and content token spans overlap."""


class EmptySpanError(StyleShieldError):
    """Token span is empty."""


class ZeroNormError(StyleShieldError):
    """Vector with zero norm where a direction is required."""


class DuplicateLayerError(StyleShieldError):
    """The same cross-attention layer appears twice in a score list."""


class PresetUnavailableError(StyleShieldError):
    """Named layer-selection preset references layers absent on this backbone."""


class MissingClassExamplesError(StyleShieldError):
    """Prior-preservation weight is positive but no class examples exist."""


class TrainingDivergedError(StyleShieldError):
    """Fine-tuning loss became non-finite."""


class ProviderUnavailableError(StyleShieldError):
    """A metric or descriptor provider is not installed or failed to load."""


class SchemaMismatchError(StyleShieldError):
    """Report files do not share a common schema."""
