"""Exception hierarchy shared by all modules."""


class RntError(Exception):
    """Base class for every error raised by rntforge."""


class ShapeError(RntError, ValueError):
    pass


class DomainError(RntError, ValueError):
    pass


class VocabularyError(RntError, KeyError):
    def __str__(self):  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class DecodeError(RntError, ValueError):
    pass


class AlignmentError(RntError, ValueError):
    pass


class ConfigError(RntError, ValueError):
    pass


class DataError(RntError, ValueError):
    pass


class TrainingError(RntError, FloatingPointError):
    def __init__(self, message, tensor_name=None):
        super().__init__(message)
        self.tensor_name = tensor_name


class EvaluationError(RntError, FloatingPointError):
    pass


class CodecError(RntError, IOError):
    """Checkpoint or tensor-blob file could not be decoded."""


class VersionError(CodecError):
    pass


class TruncatedError(CodecError):
    pass


class IntegrityError(CodecError):
    pass


class MetaError(CodecError):
    pass


class TransplantError(RntError, ValueError):
    pass


class StrategyError(RntError, ValueError):
    pass
