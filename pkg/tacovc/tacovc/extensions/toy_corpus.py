"""Deterministic formant-synthesized toy corpus with known transcripts

Every utterance is a silence-delimited sequence of phones from a small subset
of the inventory. Vowels and nasals are harmonic series of the speaker's
fundamental shaped by formant resonances, fricatives are band-passed noise.

Speakers differ in fundamental frequency and formant scaling. Utterance ``i``
has the same phone sequence and durations for every speaker, so a corpus of
several speakers is parallel frame by frame.
"""
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from .. import _io, constants
from ..config import FeatureConfig
from ..corpus import DatasetManifest, UtteranceRecord
from ..errors import InvalidInput

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
"""File name of the manifest written next to the audio directory"""

PEAK_AMPLITUDE = 0.5


@dataclass(frozen=True)
class ToySpeaker:
    name: str
    f0: float
    """Mean fundamental frequency in Hz"""
    formant_scale: float
    """Multiplier of every formant frequency (vocal tract length)"""


DEFAULT_SPEAKERS: Dict[str, ToySpeaker] = {
    "A": ToySpeaker("A", 110.0, 1.0),
    "B": ToySpeaker("B", 190.0, 1.18),
}
"""Two clearly different voices for the adaptation experiment"""

_VOICED: Dict[str, Tuple[Tuple[float, float, float], float]] = {
    "aa": ((730.0, 1090.0, 2440.0), 1.0),
    "ae": ((660.0, 1720.0, 2410.0), 1.0),
    "eh": ((530.0, 1840.0, 2480.0), 1.0),
    "iy": ((270.0, 2290.0, 3010.0), 0.9),
    "uw": ((300.0, 870.0, 2240.0), 0.9),
    "ow": ((570.0, 840.0, 2410.0), 1.0),
    "m": ((280.0, 1200.0, 2500.0), 0.4),
    "n": ((280.0, 1700.0, 2600.0), 0.4),
}
"""Formant frequencies and gain of the voiced phones"""

_FRICATIVES: Dict[str, Tuple[float, float]] = {
    "s": (4000.0, 7000.0),
    "sh": (2000.0, 4000.0),
}
"""Noise pass bands of the fricatives in Hz"""

TOY_PHONES: Tuple[str, ...] = tuple(sorted(_VOICED)) + tuple(sorted(_FRICATIVES))
"""Phones the toy corpus is built from, besides silence"""

_BANDWIDTHS = (90.0, 120.0, 160.0)


def speaker_profile(name: str, index: int = 0) -> ToySpeaker:
    """Returns the built-in voice of a speaker, or derives one from its index"""
    if name in DEFAULT_SPEAKERS:
        return DEFAULT_SPEAKERS[name]
    return ToySpeaker(name, 100.0 + 35.0 * (index % 5), 0.95 + 0.06 * (index % 4))


def phone_plan(
    rng: np.random.Generator, min_phones: int = 3, max_phones: int = 6
) -> List[Tuple[str, int]]:
    """Draws a silence-delimited phone sequence without adjacent repeats

    :return: Pairs of phone symbol and duration in frames
    """
    plan = [(constants.SILENCE_PHONE, int(rng.integers(4, 9)))]
    previous = None
    for _ in range(int(rng.integers(min_phones, max_phones + 1))):
        choices = [p for p in TOY_PHONES if p != previous]
        phone = choices[int(rng.integers(len(choices)))]
        plan.append((phone, int(rng.integers(6, 13))))
        previous = phone
    plan.append((constants.SILENCE_PHONE, int(rng.integers(4, 9))))
    return plan


def render(
    plan: Sequence[Tuple[str, int]],
    speaker: ToySpeaker,
    features: FeatureConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Synthesizes the samples of a phone plan"""
    sr = features.sample_rate
    hop = features.hop_samples
    n = sum(frames for _, frames in plan) * hop
    t = np.arange(n) / sr
    f0 = speaker.f0 * (1.0 + 0.03 * np.sin(2.0 * np.pi * 2.5 * t))
    phase = 2.0 * np.pi * np.cumsum(f0) / sr
    harmonics = np.arange(1, int((sr / 2 - 1000.0) / (speaker.f0 * 1.03)) + 1)

    amplitudes = np.zeros((n, harmonics.size))
    noise = np.zeros(n)
    start = 0
    for phone, frames in plan:
        stop = start + frames * hop
        if phone in _VOICED:
            formants, gain = _VOICED[phone]
            frequencies = harmonics * speaker.f0
            envelope = sum(
                np.exp(-0.5 * ((frequencies - f * speaker.formant_scale) / bw) ** 2)
                for f, bw in zip(formants, _BANDWIDTHS)
            )
            amplitudes[start:stop] = gain * (0.05 + envelope) / np.sqrt(harmonics)
        elif phone in _FRICATIVES:
            low, high = _FRICATIVES[phone]
            nyquist = sr / 2
            sos = signal.butter(
                4,
                [low * speaker.formant_scale / nyquist, min(high / nyquist, 0.95)],
                btype="bandpass",
                output="sos",
            )
            noise[start:stop] = 0.3 * signal.sosfilt(sos, rng.standard_normal(stop - start))
        start = stop

    window = signal.windows.hann(hop)
    window /= window.sum()
    amplitudes = signal.fftconvolve(amplitudes, window[:, None], mode="same", axes=0)
    noise = np.convolve(noise, np.sqrt(window / window.max()) / 8.0, mode="same")

    voiced = np.sum(amplitudes * np.sin(np.outer(phase, harmonics)), axis=1)
    samples = voiced + noise
    samples *= PEAK_AMPLITUDE / max(float(np.max(np.abs(samples))), 1e-9)
    return samples.astype(np.float32)


def make_toy_corpus(
    out_dir: str,
    n_utterances: int = 10,
    speakers: Sequence[str] = ("A",),
    seed: int = 0,
    features: Optional[FeatureConfig] = None,
) -> DatasetManifest:
    """Writes ``<out_dir>/wav/<speaker>_<index>.wav`` and
    ``<out_dir>/manifest.jsonl``

    :raise InvalidInput: If no utterances or speakers are requested
    """
    if n_utterances < 1 or not speakers:
        raise InvalidInput("Toy corpus needs at least one utterance and one speaker")
    features = features or FeatureConfig()
    wav_dir = os.path.join(out_dir, "wav")
    os.makedirs(wav_dir, exist_ok=True)

    records = []
    for i in range(n_utterances):
        plan = phone_plan(np.random.default_rng([seed, i]))
        transcript = " ".join(phone for phone, _ in plan)
        for j, name in enumerate(speakers):
            speaker = speaker_profile(name, j)
            samples = render(plan, speaker, features, np.random.default_rng([seed, i, j]))
            utt_id = f"{name}_{i:03d}"
            path = os.path.join(wav_dir, utt_id + ".wav")
            _io.write_wav(path, samples, features.sample_rate)
            records.append(UtteranceRecord(utt_id, path, name, transcript))

    manifest = DatasetManifest(records)
    manifest.to_jsonl(os.path.join(out_dir, MANIFEST_NAME))
    logger.info(
        f"Wrote {len(manifest)} toy utterances of speakers {', '.join(speakers)} to "
        f"{out_dir}"
    )
    return manifest


def sine_wave(
    frequency: float = 440.0,
    duration: float = 0.5,
    amplitude: float = 0.5,
    sample_rate: int = constants.SAMPLE_RATE,
) -> np.ndarray:
    """Returns a pure tone"""
    t = np.arange(int(round(duration * sample_rate))) / sample_rate
    return (amplitude * np.sin(2.0 * np.pi * frequency * t)).astype(np.float32)
