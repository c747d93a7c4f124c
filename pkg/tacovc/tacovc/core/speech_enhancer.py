"""Enhancement network sharpening over-smoothed synthesized spectrograms

The network is the composition of the trained recognizer and a copy of the
trained synthesizer: ``m -> PPG -> spectrograms``. The recognizer is shared by
reference and frozen in eval mode, only the synthesizer copy is trained. It is
trained on ``<y, y>`` and ``<y_hat, y>`` pairs drawn with equal probability,
which realizes the sum of both reconstruction terms in expectation.
"""
import copy
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

from .. import constants
from .._decorators import narrow_types
from ..checkpoint import ModelCheckpoint
from ..config import (
    FeatureConfig,
    ScheduledSamplingSchedule,
    SynthesizerConfig,
    TrainingHyper,
    from_dict,
)
from ..corpus import DatasetManifest, FeatureStore, StageReport
from ..errors import (
    AlignmentError,
    ConfigMismatch,
    FrozenWeightsChanged,
    MissingFeature,
    TacoVCError,
)
from . import _shared
from .audio_features import LinearSpectrogram, MelSpectrogram
from .phoneme_recognizer import PRModel, extract_ppg
from .synthesizer import (
    SynthesisExample,
    SynthesizerModel,
    collate,
    rate_at,
    synthesize,
    train_step,
)

logger = logging.getLogger(__name__)

SHARPNESS_BANDS = (40, 80)
"""Mid-high mel band range ``[start, stop)`` of the sharpness proxy"""


@dataclass(frozen=True, eq=False)
class EnhancementPair:
    """One ``<input, target>`` training pair of the enhancement network"""

    utt_id: str
    input: MelSpectrogram
    target: MelSpectrogram
    kind: constants.PairKind

    def __post_init__(self):
        if self.input.n_frames != self.target.n_frames:
            raise AlignmentError(
                f"{self.utt_id}: pair input has {self.input.n_frames} frames, "
                f"target has {self.target.n_frames}"
            )
        if self.kind == constants.PairKind.IDENTITY and not np.array_equal(
            self.input.values, self.target.values
        ):
            raise AlignmentError(f"{self.utt_id}: identity pair input differs from target")


@dataclass(frozen=True, eq=False)
class EnhancementSource:
    """True and synthesized features of one utterance"""

    utt_id: str
    mel: MelSpectrogram
    linear: LinearSpectrogram
    smspec: Optional[MelSpectrogram]


class TacoSEModel:
    """Frozen shared recognizer followed by a trainable synthesizer copy

    The recognizer is copied before freezing, the caller's instance keeps its
    gradient flags.
    """

    def __init__(self, pr: PRModel, synthesizer: SynthesizerModel):
        self.pr = copy.deepcopy(pr)
        self.synthesizer = synthesizer
        for p in self.pr.parameters():
            p.requires_grad_(False)
        self.pr.eval()

    @property
    def config(self) -> SynthesizerConfig:
        """Configuration of the synthesizer component"""
        return self.synthesizer.config

    def train(self, mode: bool = True) -> "TacoSEModel":
        """Sets the synthesizer mode; the recognizer always stays in eval mode"""
        self.synthesizer.train(mode)
        self.pr.eval()
        return self

    def eval(self) -> "TacoSEModel":
        return self.train(False)

    def to(self, device: torch.device) -> "TacoSEModel":
        self.synthesizer.to(device)
        self.pr.to(device)
        return self


@narrow_types
def build_taco_se(pr: PRModel, syn: SynthesizerModel) -> TacoSEModel:
    """Composes the trained recognizer and a copy of the trained synthesizer

    :raise ConfigMismatch: If the recognizer output or input does not fit the
        synthesizer
    """
    if pr.config.n_classes != syn.config.ppg_dim:
        raise ConfigMismatch(
            f"Recognizer emits {pr.config.n_classes} classes, synthesizer expects "
            f"{syn.config.ppg_dim}"
        )
    if pr.config.n_mels != syn.config.n_mels:
        raise ConfigMismatch(
            f"Recognizer reads {pr.config.n_mels} mel bands, synthesizer predicts "
            f"{syn.config.n_mels}"
        )
    return TacoSEModel(pr, copy.deepcopy(syn).eval())


def generate_smspec_corpus(
    pr: PRModel,
    syn: SynthesizerModel,
    manifest: DatasetManifest,
    store: FeatureStore,
    provenance: str,
) -> StageReport:
    """Synthesizes a mel spectrogram for every manifest utterance

    Failing utterances are logged and reported, not raised.

    :param provenance: Id of the synthesizer checkpoint, recorded in the sidecars
    """
    succeeded: List[str] = []
    failed: List[Tuple[str, str]] = []
    for record in _shared.progress(manifest, "gen-smspec"):
        try:
            mel = store.read_mel(record.utt_id)
            smspec, _ = synthesize(syn, extract_ppg(pr, mel))
            store.write_smspec(record.utt_id, smspec, provenance)
            succeeded.append(record.utt_id)
        except TacoVCError as e:
            logger.warning(f"Skipping {record.utt_id}: {e.code}: {e}")
            failed.append((record.utt_id, e.code))
    logger.info(
        f"Synthesized {len(succeeded)}/{len(manifest)} spectrograms with "
        f"synthesizer {provenance}"
    )
    return StageReport(tuple(succeeded), tuple(failed))


def load_sources(
    manifest: DatasetManifest,
    store: FeatureStore,
    provenance: Optional[str] = None,
    require_smspec: bool = True,
) -> List[EnhancementSource]:
    """Reads the true and synthesized features of every manifest utterance

    :param provenance: Synthesizer checkpoint id the synthesized features must
        come from, None to accept any
    :raise MissingFeature: If features are missing
    :raise ProvenanceMismatch: If another synthesizer produced the features
    """
    sources = []
    for record in manifest:
        smspec = None
        if require_smspec or store.has(record.utt_id, constants.SMSPEC_SUFFIX):
            smspec = store.read_smspec(record.utt_id, provenance)
        sources.append(
            EnhancementSource(
                record.utt_id,
                store.read_mel(record.utt_id),
                store.read_linear(record.utt_id),
                smspec,
            )
        )
    return sources


def sample_pair(rng: np.random.Generator, utterance: EnhancementSource) -> EnhancementPair:
    """Draws ``<y, y>`` or ``<y_hat, y>`` with probability 0.5 each

    :raise MissingFeature: If the utterance has no synthesized features
    """
    if utterance.smspec is None:
        raise MissingFeature(f"No synthesized features for {utterance.utt_id}")
    if rng.random() < 0.5:
        return EnhancementPair(
            utterance.utt_id, utterance.mel, utterance.mel, constants.PairKind.IDENTITY
        )
    return EnhancementPair(
        utterance.utt_id, utterance.smspec, utterance.mel, constants.PairKind.SYNTH
    )


@dataclass
class TacoSETrainingResult:
    """Outcome of :func:`.train_taco_se`"""

    model: TacoSEModel
    loss_history: List[float]
    identity_fraction: float
    """Fraction of drawn pairs that were ``<y, y>``"""
    step: int
    pr_checksum: str
    """Recognizer state checksum, unchanged by training"""


def train_taco_se(
    model: TacoSEModel,
    manifest: DatasetManifest,
    store: FeatureStore,
    hyper: TrainingHyper,
    provenance: Optional[str] = None,
    schedule: Optional[ScheduledSamplingSchedule] = None,
    start_step: int = 0,
) -> TacoSETrainingResult:
    """Trains the synthesizer component on randomly drawn enhancement pairs

    The recognizer posteriors of both pair inputs are computed once; the
    recognizer is never updated.

    :param provenance: Synthesizer checkpoint id the synthesized corpus must
        come from
    :param schedule: Scheduled sampling schedule, defaults to the synthesizer
        configuration spanning ``hyper.steps``
    :raise MissingFeature: If the synthesized corpus has not been generated
    :raise ProvenanceMismatch: If the synthesized corpus is stale
    """
    hyper.validate()
    manifest.require_non_empty()
    schedule = schedule or model.config.schedule(hyper.steps)
    sources = load_sources(manifest, store, provenance)
    pr_checksum = _shared.state_dict_checksum(model.pr)

    examples: Dict[Tuple[str, constants.PairKind], SynthesisExample] = {}
    for source in sources:
        inputs = {
            constants.PairKind.IDENTITY: source.mel,
            constants.PairKind.SYNTH: source.smspec,
        }
        for kind, mel in inputs.items():
            ppg = extract_ppg(model.pr, mel)
            examples[(source.utt_id, kind)] = SynthesisExample(
                source.utt_id, ppg.posteriors, source.mel.values, source.linear.values
            )

    _shared.seed_everything(hyper.seed)
    optimizer, scheduler = _shared.make_optimizer(
        [p for p in model.synthesizer.parameters() if p.requires_grad], hyper
    )
    sampler = _shared.BatchSampler(len(sources), hyper.batch_size, hyper.seed)
    generator = _shared.make_generator(hyper.seed + 1)
    rng = np.random.default_rng(hyper.seed)

    history: List[float] = []
    n_identity = 0
    n_pairs = 0
    for i in _shared.progress(range(hyper.steps), "train-se"):
        pairs = [sample_pair(rng, sources[j]) for j in next(sampler)]
        n_identity += sum(p.kind == constants.PairKind.IDENTITY for p in pairs)
        n_pairs += len(pairs)
        batch = collate(
            [examples[(p.utt_id, p.kind)] for p in pairs], model.config.reduction_factor
        )
        model.train()
        loss = train_step(
            model.synthesizer,
            batch,
            schedule,
            start_step + i,
            optimizer,
            scheduler,
            generator,
            hyper.grad_clip,
        )
        history.append(loss.total)
        if (i + 1) % hyper.log_interval == 0:
            logger.info(
                f"train-se step {start_step + i + 1}: L_T "
                f"{np.mean(history[-hyper.log_interval:]):.4f}, true rate "
                f"{rate_at(schedule, start_step + i):.3f}"
            )
    model.eval()

    if _shared.state_dict_checksum(model.pr) != pr_checksum:
        raise FrozenWeightsChanged(
            "Recognizer weights changed during enhancement training"
        )
    return TacoSETrainingResult(
        model,
        history,
        n_identity / n_pairs if n_pairs else 0.0,
        start_step + hyper.steps,
        pr_checksum,
    )


def enhance_features(
    model: TacoSEModel, m: MelSpectrogram
) -> Tuple[MelSpectrogram, LinearSpectrogram]:
    """Returns the enhanced mel spectrogram and the linear head output"""
    mel, linear = synthesize(model.synthesizer, extract_ppg(model.pr, m))
    return mel.with_role(constants.Role.ENHANCED), linear


@narrow_types
def enhance(model: TacoSEModel, m: MelSpectrogram) -> MelSpectrogram:
    """Maps a mel spectrogram to its enhanced version with the same frame count

    :raise ShapeError: If the band count differs from the model input
    """
    return enhance_features(model, m)[0]


def mean_l1(a: MelSpectrogram, b: MelSpectrogram) -> float:
    """Mean absolute difference of two equally shaped spectrograms"""
    if a.values.shape != b.values.shape:
        raise AlignmentError(f"Shapes {a.values.shape} and {b.values.shape} differ")
    return float(np.mean(np.abs(a.values - b.values)))


def band_temporal_variance(
    m: MelSpectrogram, bands: Tuple[int, int] = SHARPNESS_BANDS
) -> float:
    """Mean over mid-high bands of the temporal variance of each band

    Used as a sharpness proxy: over-smoothed spectrograms vary less in time.
    """
    return float(np.mean(np.var(m.values[:, bands[0] : bands[1]], axis=0)))


@dataclass(frozen=True)
class EnhancementReport:
    """Quality of the enhancement network over a corpus"""

    n_utterances: int
    l1_synthesized: float
    l1_enhanced: float
    l1_identity: float
    """Mean L1 of the enhanced true spectrogram to itself"""
    sharpness_synthesized: float
    sharpness_enhanced: float

    def to_dict(self) -> Dict[str, float]:
        return {
            "n_utterances": self.n_utterances,
            "l1_synthesized": self.l1_synthesized,
            "l1_enhanced": self.l1_enhanced,
            "l1_identity": self.l1_identity,
            "sharpness_synthesized": self.sharpness_synthesized,
            "sharpness_enhanced": self.sharpness_enhanced,
        }


def evaluate_enhancement(
    model: TacoSEModel,
    manifest: DatasetManifest,
    store: FeatureStore,
    provenance: Optional[str] = None,
) -> EnhancementReport:
    """Compares synthesized and enhanced spectrograms against the truth"""
    sources = load_sources(manifest, store, provenance)
    rows = []
    for source in sources:
        enhanced = enhance(model, source.smspec)
        rows.append(
            (
                mean_l1(source.smspec, source.mel),
                mean_l1(enhanced, source.mel),
                mean_l1(enhance(model, source.mel), source.mel),
                band_temporal_variance(source.smspec),
                band_temporal_variance(enhanced),
            )
        )
    means = np.mean(np.asarray(rows), axis=0)
    return EnhancementReport(len(rows), *(float(v) for v in means))


def to_checkpoint(
    model: TacoSEModel,
    features: FeatureConfig,
    step: int,
    recognizer_id: Optional[str] = None,
) -> ModelCheckpoint:
    """Snapshots the trainable synthesizer component

    The recognizer is stored only by reference to its checkpoint id.
    """
    return ModelCheckpoint.from_module(
        "taco_se",
        model.synthesizer,
        model.config,
        features,
        step,
        {"schedule_step": step, "recognizer": recognizer_id},
    )


def from_checkpoint(ckpt: ModelCheckpoint, pr: PRModel) -> TacoSEModel:
    """Rebuilds an enhancement network around a loaded recognizer"""
    synthesizer = SynthesizerModel(from_dict(SynthesizerConfig, ckpt.config))
    ckpt.load_into(synthesizer)
    return TacoSEModel(pr, synthesizer.eval())


__all__ = [
    "EnhancementPair",
    "TacoSEModel",
    "build_taco_se",
    "generate_smspec_corpus",
    "sample_pair",
    "train_taco_se",
    "enhance",
    "band_temporal_variance",
]
