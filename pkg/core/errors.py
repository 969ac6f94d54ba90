"""
Error types shared by every package
"""


class MbceError(Exception):
    """Base class for all library errors"""


class ValidationError(MbceError):
    """Bad input, configuration or file contents (CLI exit code 2)"""


class NumericalError(MbceError):
    """A computation could not produce a meaningful number (CLI exit code 3)"""


class NoiseOnlyWarning(UserWarning):
    """Observation taken from an all-zero channel; noise level falls back to a floor"""


# channel
class PathDelayOutOfRange(ValidationError):
    pass


class NonPositivePower(ValidationError):
    pass


# propagation
class RxOutsideScene(ValidationError):
    pass


class DegenerateRange(NumericalError):
    pass


# estimators
class CountExceedsDimension(ValidationError):
    pass


class InsufficientPilots(ValidationError):
    pass


class DictionaryRankDeficient(NumericalError):
    pass


class ZeroReference(NumericalError):
    pass


# autodiff / pinn
class ShapeMismatch(ValidationError):
    pass


class HeadDivisibility(ValidationError):
    pass


class DisconnectedLoss(NumericalError):
    pass


class NonDeterministicFunction(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    pass


class EmptyDataset(ValidationError):
    pass


class CheckpointFormatError(ValidationError):
    pass


# harness
class NonPositiveInput(ValidationError):
    pass


class SceneDegenerate(ValidationError):
    pass


class StepBelowCoherenceTime(ValidationError):
    pass


class UnknownMethod(ValidationError):
    pass


class CheckpointShapeMismatch(ValidationError):
    pass


class ConfigurationError(ValidationError):
    pass


class BundleError(ValidationError):
    """Dataset bundle on disk is unreadable or inconsistent"""


class ChecksumMismatch(BundleError):
    pass


class BlobSizeMismatch(BundleError):
    pass


class SchemaVersionUnsupported(BundleError):
    pass
