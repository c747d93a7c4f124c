"""Deterministic signal processing shared by every network

Waveforms are converted to normalized log-magnitude mel and linear
spectrograms. Magnitudes are compressed to dB with a floor at
:py:attr:`.FeatureConfig.min_level_db` and mapped linearly so that the floor is
0 and :py:attr:`.FeatureConfig.max_level_db` is 1:

.. code-block:: text

    value = clip((20 * log10(max(amp, 1e-5)) - min_db) / (max_db - min_db), 0, 1)

All functions in this module are pure and safe to call from many threads.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from math import gcd
from typing import Optional, Tuple

import librosa
import numpy as np
from scipy import signal

from .. import constants
from .._decorators import narrow_types
from ..config import FeatureConfig
from ..errors import InvalidInput, SampleRateMismatch, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_FEATURES = FeatureConfig()
"""Default feature parameters: 22050 Hz, 1024-point STFT, hop 256, 80 mel bands"""

_AMPLITUDE_FLOOR = 1e-5


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono audio with samples in [-1, 1]"""

    samples: np.ndarray
    sample_rate: int = constants.SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 1:
            raise ShapeError(f"Waveform must be 1-D, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise InvalidInput(f"Sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise InvalidInput("Waveform contains non-finite samples")
        if samples.size and np.max(np.abs(samples)) > 1.0:
            raise InvalidInput(
                f"Waveform samples must lie in [-1, 1], got peak "
                f"{np.max(np.abs(samples)):.4f}"
            )
        object.__setattr__(self, "samples", _readonly(samples.copy()))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        """Duration in seconds"""
        return len(self) / self.sample_rate


@dataclass(frozen=True, eq=False)
class _Spectrogram:
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 2 or values.shape[0] < 1:
            raise ShapeError(
                f"{type(self).__name__} must be [n_frames >= 1 x bands], got shape "
                f"{values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidInput(f"{type(self).__name__} contains non-finite values")
        if values.min() < 0.0 or values.max() > 1.0:
            raise InvalidInput(f"{type(self).__name__} values must lie in [0, 1]")
        object.__setattr__(self, "values", _readonly(values.copy()))

    @property
    def n_frames(self) -> int:
        """Number of frames"""
        return self.values.shape[0]

    @property
    def n_bands(self) -> int:
        """Number of frequency bands or bins"""
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class MelSpectrogram(_Spectrogram):
    """Normalized log-mel energies ``[n_frames x n_mels]`` in [0, 1]"""

    role: constants.Role = constants.Role.TRUE_Y
    hop_samples: int = constants.HOP_SAMPLES

    def with_role(self, role: constants.Role) -> "MelSpectrogram":
        """Returns the same values tagged with another role"""
        return MelSpectrogram(self.values, role=role, hop_samples=self.hop_samples)


@dataclass(frozen=True, eq=False)
class LinearSpectrogram(_Spectrogram):
    """Normalized log-magnitudes ``[n_frames x n_fft / 2 + 1]`` in [0, 1]"""


@dataclass(frozen=True, eq=False)
class MuLawWaveform:
    """Mu-law class indices of a waveform"""

    codes: np.ndarray
    sample_rate: int = constants.SAMPLE_RATE
    channels: int = constants.MU_LAW_CHANNELS

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.int64)
        if codes.ndim != 1:
            raise ShapeError(f"Mu-law codes must be 1-D, got shape {codes.shape}")
        if codes.size and (codes.min() < 0 or codes.max() >= self.channels):
            raise InvalidInput(f"Mu-law codes must lie in [0, {self.channels})")
        object.__setattr__(self, "codes", _readonly(codes.copy()))

    def __len__(self) -> int:
        return self.codes.shape[0]


@lru_cache(maxsize=8)
def _mel_basis(features: FeatureConfig) -> np.ndarray:
    basis = librosa.filters.mel(
        sr=features.sample_rate,
        n_fft=features.n_fft,
        n_mels=features.n_mels,
        fmin=features.fmin,
        fmax=features.fmax,
        htk=features.mel_scale == "htk",
        norm="slaney",
        dtype=np.float64,
    )
    return _readonly(basis)


def mel_filterbank(features: FeatureConfig = DEFAULT_FEATURES) -> np.ndarray:
    """Returns the ``[n_mels x n_linear]`` triangular mel filterbank"""
    return _mel_basis(features)


def mel_center_frequencies(features: FeatureConfig = DEFAULT_FEATURES) -> np.ndarray:
    """Returns the center frequency in Hz of every mel filter"""
    edges = librosa.mel_frequencies(
        n_mels=features.n_mels + 2,
        fmin=features.fmin,
        fmax=features.fmax,
        htk=features.mel_scale == "htk",
    )
    return edges[1:-1]


def amplitude_to_normalized(
    amplitude: np.ndarray, features: FeatureConfig = DEFAULT_FEATURES
) -> np.ndarray:
    """Compresses magnitudes to dB and maps them into [0, 1]"""
    db = 20.0 * np.log10(np.maximum(amplitude, _AMPLITUDE_FLOOR))
    normalized = (db - features.min_level_db) / (
        features.max_level_db - features.min_level_db
    )
    return np.clip(normalized, 0.0, 1.0).astype(np.float32)


def normalized_to_amplitude(
    values: np.ndarray, features: FeatureConfig = DEFAULT_FEATURES
) -> np.ndarray:
    """Inverts :func:`.amplitude_to_normalized`, mapping the floor to silence"""
    values = np.asarray(values, dtype=np.float64)
    db = values * (features.max_level_db - features.min_level_db) + features.min_level_db
    return np.where(values <= 0.0, 0.0, np.power(10.0, db / 20.0))


def _stft_magnitude(w: Waveform, features: FeatureConfig) -> np.ndarray:
    """Returns the ``[n_linear x n_frames]`` STFT magnitude"""
    if len(w) == 0:
        raise InvalidInput("Cannot extract features from an empty waveform")
    if w.sample_rate != features.sample_rate:
        raise SampleRateMismatch(
            f"Expected {features.sample_rate} Hz audio, got {w.sample_rate} Hz. "
            f"Resample first."
        )
    samples = w.samples.astype(np.float64)
    if features.preemphasis is not None:
        samples = signal.lfilter([1.0, -features.preemphasis], [1.0], samples)
    stft = librosa.stft(
        samples,
        n_fft=features.n_fft,
        hop_length=features.hop_samples,
        win_length=features.n_fft,
        window="hann",
        center=features.center,
        pad_mode=features.pad_mode,
    )
    return np.abs(stft)


@narrow_types
def waveform_to_features(
    w: Waveform, features: FeatureConfig = DEFAULT_FEATURES
) -> Tuple[MelSpectrogram, LinearSpectrogram]:
    """Returns the mel and linear spectrograms of a waveform from one STFT

    :raise InvalidInput: If the waveform is empty
    :raise SampleRateMismatch: If the waveform is not at the feature rate
    """
    magnitude = _stft_magnitude(w, features)
    mel_amplitude = _mel_basis(features) @ magnitude
    mel = MelSpectrogram(
        amplitude_to_normalized(mel_amplitude.T, features),
        role=constants.Role.TRUE_Y,
        hop_samples=features.hop_samples,
    )
    linear = LinearSpectrogram(amplitude_to_normalized(magnitude.T, features))
    return mel, linear


@narrow_types
def waveform_to_melspec(
    w: Waveform, features: FeatureConfig = DEFAULT_FEATURES
) -> MelSpectrogram:
    """Returns the normalized log-mel spectrogram of a waveform

    The frame count is ``len(w) // hop + 1`` (center padded STFT).

    :raise InvalidInput: If the waveform is empty
    :raise SampleRateMismatch: If the waveform is not at the feature rate
    """
    return waveform_to_features(w, features)[0]


@narrow_types
def waveform_to_linspec(
    w: Waveform, features: FeatureConfig = DEFAULT_FEATURES
) -> LinearSpectrogram:
    """Returns the normalized log-magnitude linear spectrogram of a waveform

    :raise InvalidInput: If the waveform is empty
    :raise SampleRateMismatch: If the waveform is not at the feature rate
    """
    return waveform_to_features(w, features)[1]


@narrow_types
def resample(
    w: Waveform, target_rate: int, features: FeatureConfig = DEFAULT_FEATURES
) -> Waveform:
    """Band-limited polyphase resampling

    The output has exactly ``round(len(w) * target_rate / w.sample_rate)``
    samples.

    :raise InvalidInput: If the target rate is not positive
    """
    if target_rate <= 0:
        raise InvalidInput(f"Target sample rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return w

    divisor = gcd(target_rate, w.sample_rate)
    up, down = target_rate // divisor, w.sample_rate // divisor
    n_out = int(round(len(w) * target_rate / w.sample_rate))
    if len(w) == 0:
        return Waveform(np.zeros(0, dtype=np.float32), target_rate)

    resampled = signal.resample_poly(
        w.samples.astype(np.float64),
        up,
        down,
        window=("kaiser", features.resample_kaiser_beta),
    )
    if resampled.shape[0] >= n_out:
        resampled = resampled[:n_out]
    else:
        resampled = np.pad(resampled, (0, n_out - resampled.shape[0]))
    logger.debug(f"Resampled {len(w)} samples from {w.sample_rate} to {target_rate} Hz")
    return Waveform(np.clip(resampled, -1.0, 1.0), target_rate)


def mu_law_compress(samples: np.ndarray, channels: int = constants.MU_LAW_CHANNELS):
    """Quantizes samples in [-1, 1] to mu-law class indices

    Rounds half up, so 0.0 maps to ``channels // 2``.

    :raise InvalidInput: If a sample lies outside [-1, 1]
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size and (
        not np.all(np.isfinite(samples)) or np.max(np.abs(samples)) > 1.0
    ):
        raise InvalidInput("Mu-law input samples must lie in [-1, 1]")
    mu = channels - 1
    companded = np.sign(samples) * np.log1p(mu * np.abs(samples)) / np.log1p(mu)
    return np.floor((companded + 1.0) / 2.0 * mu + 0.5).astype(np.int64)


def mu_law_expand(codes: np.ndarray, channels: int = constants.MU_LAW_CHANNELS):
    """Maps mu-law class indices back to samples in [-1, 1]"""
    mu = channels - 1
    companded = 2.0 * np.asarray(codes, dtype=np.float64) / mu - 1.0
    return np.sign(companded) * np.expm1(np.abs(companded) * np.log1p(mu)) / mu


@narrow_types
def mu_law_encode(w: Waveform, channels: int = constants.MU_LAW_CHANNELS) -> MuLawWaveform:
    """Encodes a waveform into mu-law class indices

    :raise InvalidInput: If a sample lies outside [-1, 1]
    """
    return MuLawWaveform(mu_law_compress(w.samples, channels), w.sample_rate, channels)


@narrow_types
def mu_law_decode(m: MuLawWaveform) -> Waveform:
    """Decodes mu-law class indices into a waveform"""
    samples = np.clip(mu_law_expand(m.codes, m.channels), -1.0, 1.0)
    return Waveform(samples, m.sample_rate)


@narrow_types
def griffin_lim(
    l: LinearSpectrogram,  # noqa: E741
    iters: int = 60,
    features: FeatureConfig = DEFAULT_FEATURES,
    seed: int = 0,
    momentum: float = 0.0,
    length: Optional[int] = None,
) -> Waveform:
    """Inverts a linear spectrogram with the Griffin-Lim phase reconstruction

    The initial phase is drawn from ``seed`` so the output is deterministic.
    With ``momentum=0`` the spectral reconstruction error is non-increasing in
    ``iters``.

    :param l: Spectrogram to invert
    :param iters: Number of iterations, at least 1
    :param features: Feature parameters the spectrogram was extracted with
    :param seed: Initial phase seed
    :param momentum: Fast Griffin-Lim momentum
    :param length: Output length in samples, defaults to ``n_frames * hop``
    :raise InvalidInput: If ``iters`` is less than 1
    :raise ShapeError: If the bin count does not match the FFT size
    """
    if iters < 1:
        raise InvalidInput(f"Griffin-Lim needs at least one iteration, got {iters}")
    if l.n_bands != features.n_linear:
        raise ShapeError(f"Expected {features.n_linear} bins, got {l.n_bands}")

    length = length if length is not None else l.n_frames * features.hop_samples
    amplitude = normalized_to_amplitude(l.values, features).T
    if not np.any(amplitude):
        return Waveform(np.zeros(length, dtype=np.float32), features.sample_rate)

    samples = librosa.griffinlim(
        amplitude,
        n_iter=iters,
        hop_length=features.hop_samples,
        win_length=features.n_fft,
        n_fft=features.n_fft,
        window="hann",
        center=features.center,
        length=length,
        pad_mode=features.pad_mode,
        momentum=momentum,
        init="random",
        random_state=seed,
    )
    if features.preemphasis is not None:
        samples = signal.lfilter([1.0], [1.0, -features.preemphasis], samples)
    return Waveform(np.clip(samples, -1.0, 1.0), features.sample_rate)


def spectral_convergence(
    target: LinearSpectrogram,
    w: Waveform,
    features: FeatureConfig = DEFAULT_FEATURES,
) -> float:
    """Relative Frobenius error between a target magnitude and the magnitude of
    a waveform, both in linear amplitude
    """
    estimate = _stft_magnitude(w, features).T
    reference = normalized_to_amplitude(target.values, features)
    n = min(estimate.shape[0], reference.shape[0])
    denominator = np.linalg.norm(reference[:n])
    if denominator == 0:
        return float(np.linalg.norm(estimate[:n]))
    return float(np.linalg.norm(estimate[:n] - reference[:n]) / denominator)


__all__ = [
    "Waveform",
    "MelSpectrogram",
    "LinearSpectrogram",
    "MuLawWaveform",
    "mel_filterbank",
    "mel_center_frequencies",
    "waveform_to_melspec",
    "waveform_to_linspec",
    "waveform_to_features",
    "resample",
    "mu_law_encode",
    "mu_law_decode",
    "griffin_lim",
]
