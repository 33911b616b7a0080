"""Exception hierarchy for the feat package."""


class FeatError(Exception):
    """Base class for all feat errors."""


class ConfigurationError(FeatError):
    """A config value or combination of values is invalid."""


class ArgumentError(FeatError, ValueError):
    """An operation argument is outside its documented domain."""


class LayerRangeError(ArgumentError):
    """A layer index falls outside 1..num_layers."""


class InjectionError(FeatError):
    """A feature map injected into the synthesis pass has the wrong shape."""


class BlendError(FeatError):
    """Blend operands or mask do not agree in shape."""


class MaskError(FeatError):
    """A provided attention mask does not match the blend layer resolution."""


class VocabularyError(FeatError, KeyError):
    """A text token is missing from an embedder vocabulary."""


class NumericError(FeatError):
    """A computation produced non-finite or otherwise unusable values."""


class StaleModelError(FeatError):
    """An edit model's generator fingerprint does not match the live weights."""


class FormatError(FeatError):
    """A serialized file is malformed or does not match its declared layout."""
