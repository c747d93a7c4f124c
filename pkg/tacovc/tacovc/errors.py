"""Exceptions raised by the pipeline

Every exception carries a machine-readable :attr:`TacoVCError.code` that the
command line interface reports on stderr.
"""
from typing import Any, Dict


class TacoVCError(Exception):
    """Base class for custom exceptions raised by the pipeline"""

    code = "TacoVCError"
    """Machine-readable error code"""

    def as_dict(self) -> Dict[str, Any]:
        """Returns the error as a JSON serializable dictionary"""
        return {"error": self.code, "message": str(self)}


class InvalidInput(TacoVCError):
    """Raised when an operation receives a value outside of its domain"""

    code = "InvalidInput"


class SampleRateMismatch(InvalidInput):
    """Raised when a waveform does not have the expected sample rate"""

    code = "SampleRateMismatch"


class ShapeError(InvalidInput):
    """Raised when an array or tensor does not have the expected shape"""

    code = "ShapeError"


class InvalidConfig(TacoVCError):
    """Raised when a configuration is internally inconsistent"""

    code = "InvalidConfig"


class CtcInfeasible(TacoVCError):
    """Raised when a transcript cannot be aligned to the available frames"""

    code = "CtcInfeasible"


class AlignmentError(TacoVCError):
    """Raised when paired features do not have matching lengths"""

    code = "AlignmentError"


class ConfigMismatch(TacoVCError):
    """Raised when models or features were produced with incompatible parameters"""

    code = "ConfigMismatch"


class MissingFeature(TacoVCError):
    """Raised when a required feature file has not been generated"""

    code = "MissingFeature"


class ProvenanceMismatch(MissingFeature):
    """Raised when a feature file was produced by a different checkpoint than the
    one the caller requires
    """

    code = "ProvenanceMismatch"


class MissingCheckpoint(TacoVCError):
    """Raised when a required checkpoint file does not exist"""

    code = "MissingCheckpoint"


class IoError(TacoVCError):
    """Raised when a file cannot be read or is malformed"""

    code = "IoError"


class FrozenWeightsChanged(TacoVCError):
    """Raised when training updated weights that must stay frozen"""

    code = "FrozenWeightsChanged"
