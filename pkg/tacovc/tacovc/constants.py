"""This module contains the static configuration shared by every network in the
pipeline: acoustic feature parameters, file format identifiers, checkpoint names
and defaults for the training recipes.

Using this module, the feature extractor, the networks and the CLI refer to a
single source of truth.

> [!WARNING] Circular imports
> This module should not import anything from the tacovc package namespace to
> prevent circular imports.
"""
from enum import Enum
from typing import Final, Literal

PACKAGE_NAME: Final = "tacovc"
"""Name of the Python package and the console script"""

SAMPLE_RATE: Final = 22050
"""Feature sample rate in Hz. Corpora at other rates are resampled on ingestion."""

N_FFT: Final = 1024
"""STFT window length in samples (Hann window)"""

HOP_SAMPLES: Final = 256
"""STFT step size in samples. Also the vocoder upsampling factor."""

N_MELS: Final = 80
"""Number of mel bands"""

N_LINEAR: Final = N_FFT // 2 + 1
"""Number of linear spectrogram bins (513)"""

MEL_FMIN: Final = 125.0
"""Lowest mel filter edge in Hz"""

MEL_FMAX: Final = 7600.0
"""Highest mel filter edge in Hz"""

MEL_SCALE: Final = "slaney"
"""Mel scale formula. Recorded in feature sidecars to guard against mismatch."""

MIN_LEVEL_DB: Final = -100.0
"""dB floor, maps to normalized value 0"""

MAX_LEVEL_DB: Final = 20.0
"""dB ceiling (headroom over unit amplitude), maps to normalized value 1"""

MU_LAW_CHANNELS: Final = 256
"""Number of mu-law classes of the categorical vocoder target"""

MU_LAW_ROUNDING: Final = "half_up"
"""Mu-law quantizer rounding: ``floor(v + 0.5)`` so that 0.0 maps to code 128"""

N_PHONES: Final = 61
"""Size of the TIMIT training phone inventory"""

N_FOLDED_PHONES: Final = 39
"""Size of the folded scoring inventory used for PER"""

CTC_BLANK: Final = N_PHONES
"""CTC blank class id. The blank is the last PPG channel."""

PPG_DIM: Final = N_PHONES + 1
"""PPG channel count including the CTC blank (62)"""

SILENCE_PHONE: Final = "h#"
"""Utterance boundary silence symbol of the inventory"""

TVCF_MAGIC: Final = b"TVCF"
"""Magic bytes of a feature (tensor) file"""

TVCF_VERSION: Final = 1
"""Version of the tensor file format written by this package"""

TVCK_MAGIC: Final = b"TVCK"
"""Magic bytes of a checkpoint container"""

TVCK_VERSION: Final = 1
"""Version of the checkpoint container format written by this package"""

CHECKPOINT_ID_LENGTH: Final = 16
"""Number of hex characters of the sha256 digest used as a checkpoint id"""

FEATURE_HASH_LENGTH: Final = 16
"""Number of hex characters of the sha256 digest used as a feature hash"""

ENV_CHECKPOINT_ROOT: Final = "TACOVC_CHECKPOINT_ROOT"
"""Environment variable naming the checkpoint directory"""

MEL_SUFFIX: Final = ".mel"
"""Feature store suffix of true mel spectrograms"""

LINEAR_SUFFIX: Final = ".lin"
"""Feature store suffix of true linear spectrograms"""

SMSPEC_SUFFIX: Final = ".smspec"
"""Feature store suffix of synthesized mel spectrograms"""

SIDECAR_SUFFIX: Final = ".json"
"""Suffix appended to a feature file path for its JSON sidecar"""

CHECKPOINT_SUFFIX: Final = ".tvck"
"""Suffix of checkpoint container files"""

ADAPTATION_LOG_NAME: Final = "adaptation.jsonl"
"""File name of the append-only adaptation log"""

PROVENANCE_AUDIO: Final = "audio"
"""Provenance tag of features extracted directly from audio"""

ModelKind = Literal["recognizer", "synthesizer", "taco_se", "vocoder"]
"""Kinds of networks stored in checkpoints. Also the checkpoint file stems."""

MODEL_KINDS: Final = ("recognizer", "synthesizer", "taco_se", "vocoder")
"""All :py:data:`.ModelKind` values in pipeline training order"""

Preset = Literal["desk", "paper"]
"""Parameter presets shipped in ``params/``"""


class Role(str, Enum):
    """Source role tag of a mel spectrogram"""

    TRUE_Y = "TRUE_Y"
    """Extracted from recorded audio"""

    SYNTH_YHAT = "SYNTH_YHAT"
    """Predicted by the synthesizer"""

    ENHANCED = "ENHANCED"
    """Output of the enhancement network"""


class PairKind(str, Enum):
    """Kind of an enhancement training pair"""

    IDENTITY = "IDENTITY"
    """``<y, y>``"""

    SYNTH = "SYNTH"
    """``<y_hat, y>``"""


class GenerationMode(str, Enum):
    """Vocoder sample selection mode"""

    ARGMAX = "ARGMAX"
    SAMPLE = "SAMPLE"
