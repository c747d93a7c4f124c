"""End-to-end conversion with a set of trained checkpoints

.. code-block:: text

    waveform -> mel -> PPG -> synthesized mel -> enhanced mel -> waveform

The enhancement stage can be skipped, and the vocoder can be replaced by
Griffin-Lim inversion of the linear spectrogram of the last spectrogram stage
that ran. Checkpoints are validated before any network runs and are never
modified.
"""
import logging
import os
from dataclasses import dataclass
from typing import List, Literal, Optional, Tuple

from . import _io, constants
from .checkpoint import CheckpointSet
from .config import PipelineConfig
from .corpus import DatasetManifest, StageReport, load_waveform
from .core import phoneme_recognizer, speech_enhancer, synthesizer, vocoder
from .core.audio_features import (
    LinearSpectrogram,
    MelSpectrogram,
    Waveform,
    griffin_lim,
    waveform_to_melspec,
)
from .core.phoneme_recognizer import PPG
from .errors import ConfigMismatch, TacoVCError
from .extensions import visualization

logger = logging.getLogger(__name__)

VocoderKind = Literal["wavenet", "griffinlim"]
"""Waveform generator of the last conversion stage"""


@dataclass(frozen=True, eq=False)
class ConversionResult:
    """Waveform and intermediate features of one conversion"""

    waveform: Waveform
    source: MelSpectrogram
    ppg: PPG
    synthesized: MelSpectrogram
    enhanced: Optional[MelSpectrogram]
    linear: LinearSpectrogram
    """Linear head output of the last spectrogram stage that ran"""

    @property
    def final_mel(self) -> MelSpectrogram:
        """Mel spectrogram handed to the vocoder"""
        return self.enhanced if self.enhanced is not None else self.synthesized


def output_name(utt_id: str, source_speaker: str, target_speaker: str) -> str:
    """``<utt_id>__<source>_to_<target>.wav``"""
    return f"{utt_id}__{source_speaker}_to_{target_speaker}.wav"


class ConversionPipeline:
    """Trained networks of one target speaker

    :param checkpoints: Checkpoint directory
    :param config: Pipeline configuration, its feature parameters must match
        every checkpoint
    :param enhance: Run the enhancement network on the synthesized spectrogram
    :param vocoder_kind: ``wavenet`` or ``griffinlim``
    :raise MissingCheckpoint: If a required checkpoint is missing
    :raise ConfigMismatch: If the checkpoints use mixed feature parameters or
        the enhancement network was trained on another recognizer
    """

    def __init__(
        self,
        checkpoints: CheckpointSet,
        config: PipelineConfig,
        enhance: bool = True,
        vocoder_kind: VocoderKind = "wavenet",
    ):
        self.config = config
        self.features = config.features
        self.enhance = enhance
        self.vocoder_kind = vocoder_kind

        kinds: List[constants.ModelKind] = ["recognizer", "synthesizer"]
        if enhance:
            kinds.append("taco_se")
        if vocoder_kind == "wavenet":
            kinds.append("vocoder")
        checkpoints.require_same_features(kinds, config.features)
        self.checkpoint_ids = {kind: checkpoints.checkpoint_id(kind) for kind in kinds}
        if enhance:
            paired = checkpoints.taco_se.extra.get("recognizer")
            if paired != self.checkpoint_ids["recognizer"]:
                raise ConfigMismatch(
                    f"Enhancement network was trained on recognizer {paired}, found "
                    f"{self.checkpoint_ids['recognizer']}"
                )

        self.recognizer = phoneme_recognizer.from_checkpoint(checkpoints.recognizer)
        self.synthesizer = synthesizer.from_checkpoint(checkpoints.synthesizer)
        self.taco_se = (
            speech_enhancer.from_checkpoint(checkpoints.taco_se, self.recognizer)
            if enhance
            else None
        )
        self.vocoder = (
            vocoder.from_checkpoint(checkpoints.vocoder) if vocoder_kind == "wavenet" else None
        )
        logger.info(
            f"Loaded conversion pipeline {self.checkpoint_ids} (enhance: {enhance}, "
            f"vocoder: {vocoder_kind})"
        )

    def spectrograms(
        self, w: Waveform
    ) -> Tuple[MelSpectrogram, PPG, MelSpectrogram, Optional[MelSpectrogram], LinearSpectrogram]:
        """Runs every stage up to the vocoder"""
        source = waveform_to_melspec(w, self.features)
        ppg = phoneme_recognizer.extract_ppg(self.recognizer, source)
        synthesized, linear = synthesizer.synthesize(self.synthesizer, ppg)
        enhanced = None
        if self.taco_se is not None:
            enhanced, linear = speech_enhancer.enhance_features(self.taco_se, synthesized)
        return source, ppg, synthesized, enhanced, linear

    def convert(self, w: Waveform) -> ConversionResult:
        """Converts a waveform to the target voice

        The output has ``n_frames * hop`` samples where ``n_frames`` is the
        frame count of the source mel spectrogram.
        """
        source, ppg, synthesized, enhanced, linear = self.spectrograms(w)
        n_samples = source.n_frames * self.features.hop_samples
        conversion = self.config.conversion
        if self.vocoder is None:
            waveform = griffin_lim(
                linear,
                conversion.griffin_lim_iters,
                self.features,
                seed=conversion.griffin_lim_seed,
                momentum=conversion.griffin_lim_momentum,
                length=n_samples,
            )
        else:
            waveform = vocoder.generate(
                self.vocoder,
                enhanced if enhanced is not None else synthesized,
                conversion.generation_mode,
                conversion.generation_seed,
                self.features.sample_rate,
            )
        return ConversionResult(waveform, source, ppg, synthesized, enhanced, linear)

    def convert_file(
        self, source_path: str, output_path: str, debug_dir: Optional[str] = None
    ) -> ConversionResult:
        """Converts a WAV file and writes 16-bit PCM output

        :raise IoError: If the source cannot be read
        """
        result = self.convert(load_waveform(source_path, self.features))
        _io.write_wav(output_path, result.waveform.samples, result.waveform.sample_rate)
        logger.info(
            f"Converted {source_path} ({result.source.n_frames} frames) to {output_path}"
        )
        if debug_dir is not None:
            stem = os.path.splitext(os.path.basename(output_path))[0]
            visualization.write_conversion_image(
                os.path.join(debug_dir, stem + ".png"),
                result.source.values,
                result.synthesized.values,
                result.enhanced.values if result.enhanced is not None else None,
            )
        return result


def convert_batch(
    pipeline: ConversionPipeline,
    manifest: DatasetManifest,
    out_dir: str,
    target_speaker: str,
    debug_dir: Optional[str] = None,
) -> StageReport:
    """Converts every manifest utterance into ``out_dir``

    Failing utterances are logged and reported, not raised.
    """
    os.makedirs(out_dir, exist_ok=True)
    succeeded: List[str] = []
    failed: List[Tuple[str, str]] = []
    for record in manifest:
        path = os.path.join(out_dir, output_name(record.utt_id, record.speaker, target_speaker))
        try:
            pipeline.convert_file(record.audio, path, debug_dir)
            succeeded.append(record.utt_id)
        except TacoVCError as e:
            logger.warning(f"Skipping {record.utt_id}: {e.code}: {e}")
            failed.append((record.utt_id, e.code))
    return StageReport(tuple(succeeded), tuple(failed))


__all__ = ["ConversionPipeline", "ConversionResult", "convert_batch", "output_name"]
