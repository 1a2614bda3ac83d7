"""Exception hierarchy shared across the toolkit."""


class BiasLensError(Exception):
    """Base class for all toolkit errors."""


class DatasetError(BiasLensError):
    """A dataset directory or image could not be ingested or split."""


class TransformSpecError(BiasLensError):
    """A transform description is malformed or unsupported."""


class ConfigError(BiasLensError):
    """A model, training, or run configuration is invalid."""


class CropError(BiasLensError):
    """A crop request does not fit inside one or more images."""


class SynthError(BiasLensError):
    """A synthetic-dataset request is invalid or inconsistent."""
