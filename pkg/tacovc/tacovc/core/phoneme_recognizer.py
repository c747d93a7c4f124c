"""Convolutional phoneme recognizer trained with CTC

The recognizer maps a mel spectrogram to frame-level phonetic posteriorgrams
(PPGs): a softmax over the 61 training phones and the CTC blank, which is the
last class. No layer changes the time resolution, so a PPG has exactly one row
per mel frame.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .._decorators import narrow_types
from ..checkpoint import ModelCheckpoint
from ..config import FeatureConfig, PRConfig, TrainingHyper, from_dict
from ..corpus import DatasetManifest, FeatureStore, PhoneInventory, default_inventory
from ..errors import CtcInfeasible, InvalidInput, ShapeError
from . import _shared
from .audio_features import MelSpectrogram

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PhonemeSequence:
    """Phone ids of the training inventory, never the CTC blank

    Decoded hypotheses may be empty; references used for scoring may not.
    """

    labels: Tuple[int, ...]
    inventory: PhoneInventory = field(
        default_factory=default_inventory, compare=False, repr=False
    )

    def __post_init__(self):
        labels = tuple(int(label) for label in self.labels)
        for label in labels:
            if not 0 <= label < len(self.inventory):
                raise InvalidInput(
                    f"Phone id {label} outside [0, {len(self.inventory)}), the blank "
                    f"is not a phone"
                )
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_transcript(
        cls, transcript: str, inventory: Optional[PhoneInventory] = None
    ) -> "PhonemeSequence":
        """Parses a whitespace separated phone transcript"""
        inventory = inventory or default_inventory()
        return cls(tuple(inventory.encode(transcript)), inventory)

    def __len__(self) -> int:
        return len(self.labels)

    def symbols(self) -> List[str]:
        """Returns the phone symbols"""
        return self.inventory.decode(self.labels)

    def folded(self) -> List[str]:
        """Returns the symbols of the scoring inventory"""
        return self.inventory.fold(self.labels)

    def __str__(self) -> str:
        return " ".join(self.symbols())


@dataclass(frozen=True, eq=False)
class PPG:
    """Phonetic posteriorgram ``[n_frames x C]``, rows are distributions"""

    posteriors: np.ndarray

    def __post_init__(self):
        posteriors = np.asarray(self.posteriors, dtype=np.float32)
        if posteriors.ndim != 2 or posteriors.shape[0] < 1:
            raise ShapeError(f"PPG must be [n_frames >= 1 x C], got {posteriors.shape}")
        if posteriors.min() < 0.0:
            raise InvalidInput("PPG entries must be non-negative")
        if not np.allclose(posteriors.sum(axis=1), 1.0, atol=1e-5, rtol=0.0):
            raise InvalidInput("PPG rows must sum to 1")
        posteriors = posteriors.copy()
        posteriors.setflags(write=False)
        object.__setattr__(self, "posteriors", posteriors)

    @property
    def n_frames(self) -> int:
        """Number of frames"""
        return self.posteriors.shape[0]

    @property
    def n_classes(self) -> int:
        """Number of classes including the blank"""
        return self.posteriors.shape[1]


class PRModel(nn.Module):
    """Stack of time preserving convolutions with Leaky-ReLU and batch
    normalization after each activation, and a per-frame classification head
    """

    def __init__(self, config: PRConfig):
        super().__init__()
        config.validate()
        self.config = config
        layers: List[nn.Module] = []
        in_channels = config.n_mels
        for channels, kernel, dilation in zip(
            config.channels, config.kernel_sizes, config.dilations
        ):
            layers += [
                nn.Conv1d(
                    in_channels,
                    channels,
                    kernel,
                    padding=dilation * (kernel - 1) // 2,
                    dilation=dilation,
                ),
                nn.LeakyReLU(config.leaky_relu_slope),
                nn.BatchNorm1d(channels),
            ]
            if config.dropout > 0:
                layers.append(nn.Dropout(config.dropout))
            in_channels = channels
        self.convolutions = nn.Sequential(*layers)
        self.head = nn.Linear(in_channels, config.n_classes)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        """Maps ``[B x T x n_mels]`` mel frames to ``[B x T x C]`` logits"""
        x = self.convolutions(mel.transpose(1, 2))
        return self.head(x.transpose(1, 2))

    def posteriors(self, mel: torch.Tensor) -> torch.Tensor:
        """Returns ``[B x T x C]`` softmax posteriors"""
        return F.softmax(self(mel), dim=-1)


@narrow_types
def build_pr_model(cfg: PRConfig, seed: Optional[int] = None) -> PRModel:
    """Builds an untrained recognizer

    :param cfg: Architecture
    :param seed: Optional seed of the weight initialization
    :raise InvalidConfig: If the configuration would downsample time
    """
    if seed is not None:
        torch.manual_seed(seed)
    model = PRModel(cfg)
    logger.debug(f"Built recognizer with {_shared.count_parameters(model)} parameters")
    return model


def ctc_feasible(labels: Sequence[int], n_frames: int) -> bool:
    """True if a CTC alignment of ``labels`` fits into ``n_frames`` frames

    Adjacent repeated labels need a blank between them.
    """
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats <= n_frames


@dataclass
class PRTrainingResult:
    """Outcome of :func:`.train_pr`"""

    model: PRModel
    loss_history: List[float]
    """Mean CTC loss per frame of every step"""
    skipped: List[str]
    """Utterances skipped because their transcript did not fit"""
    step: int


def _load_training_set(
    manifest: DatasetManifest, store: FeatureStore, inventory: PhoneInventory
) -> Tuple[List[str], List[np.ndarray], List[List[int]], List[str]]:
    manifest.require_transcripts()
    utt_ids, mels, targets, skipped = [], [], [], []
    for record in manifest:
        mel = store.read_mel(record.utt_id)
        labels = inventory.encode(record.transcript or "")
        if not labels or not ctc_feasible(labels, mel.n_frames):
            error = CtcInfeasible(
                f"{record.utt_id}: {len(labels)} phones do not fit {mel.n_frames} frames"
            )
            logger.warning(f"Skipping {record.utt_id}: {error.code}: {error}")
            skipped.append(record.utt_id)
            continue
        utt_ids.append(record.utt_id)
        mels.append(np.asarray(mel.values))
        targets.append(labels)
    if not utt_ids:
        raise CtcInfeasible("No utterance in the manifest can be aligned")
    return utt_ids, mels, targets, skipped


def ctc_loss_per_frame(
    logits: torch.Tensor,
    lengths: torch.Tensor,
    targets: Sequence[Sequence[int]],
    blank: int,
) -> torch.Tensor:
    """Summed CTC loss of a batch divided by its number of real frames"""
    log_probs = F.log_softmax(logits, dim=-1).transpose(0, 1)
    flat = torch.tensor([t for seq in targets for t in seq], dtype=torch.int64)
    target_lengths = torch.tensor([len(seq) for seq in targets], dtype=torch.int64)
    loss = F.ctc_loss(
        log_probs.cpu(),
        flat,
        lengths.cpu(),
        target_lengths,
        blank=blank,
        reduction="sum",
        zero_infinity=True,
    )
    return loss / lengths.sum()


def train_pr(
    model: PRModel,
    manifest: DatasetManifest,
    store: FeatureStore,
    hyper: TrainingHyper,
    inventory: Optional[PhoneInventory] = None,
    start_step: int = 0,
) -> PRTrainingResult:
    """Trains the recognizer with CTC on the stored mel spectrograms

    Utterances whose transcript cannot be aligned to their frames are skipped
    with a warning.

    :raise InvalidInput: If a record has no transcript
    :raise MissingFeature: If features have not been extracted
    :raise CtcInfeasible: If no utterance can be aligned
    """
    hyper.validate()
    inventory = inventory or default_inventory()
    if model.config.n_classes != len(inventory) + 1:
        raise InvalidInput(
            f"Recognizer has {model.config.n_classes} classes, inventory needs "
            f"{len(inventory) + 1}"
        )
    utt_ids, mels, targets, skipped = _load_training_set(manifest, store, inventory)

    _shared.seed_everything(hyper.seed)
    device = next(model.parameters()).device
    optimizer, scheduler = _shared.make_optimizer(model.parameters(), hyper)
    sampler = _shared.BatchSampler(len(utt_ids), hyper.batch_size, hyper.seed)
    blank = model.config.blank_id

    model.train()
    history: List[float] = []
    for step in _shared.progress(range(hyper.steps), "train-pr"):
        batch = next(sampler)
        mel, lengths = _shared.pad_sequences([mels[i] for i in batch])
        logits = model(mel.to(device))
        loss = ctc_loss_per_frame(logits, lengths, [targets[i] for i in batch], blank)
        _shared.optimizer_step(loss, model, optimizer, scheduler, hyper.grad_clip)
        history.append(loss.item())
        if (step + 1) % hyper.log_interval == 0:
            logger.info(
                f"train-pr step {start_step + step + 1}: CTC loss per frame "
                f"{np.mean(history[-hyper.log_interval:]):.4f}"
            )
    model.eval()
    return PRTrainingResult(model, history, skipped, start_step + hyper.steps)


@narrow_types
def extract_ppg(model: PRModel, m: MelSpectrogram) -> PPG:
    """Returns the frame-level posteriorgram of a mel spectrogram

    :raise ShapeError: If the band count differs from the recognizer input
    """
    if m.n_bands != model.config.n_mels:
        raise ShapeError(
            f"Recognizer expects {model.config.n_mels} bands, got {m.n_bands}"
        )
    device = next(model.parameters()).device
    was_training = model.training
    model.eval()
    with torch.inference_mode():
        logits = model(torch.from_numpy(np.asarray(m.values)).unsqueeze(0).to(device))
        posteriors = F.softmax(logits[0].double(), dim=-1)
    model.train(was_training)
    return PPG(posteriors.cpu().numpy())


def greedy_decode(
    ppg: PPG, inventory: Optional[PhoneInventory] = None
) -> PhonemeSequence:
    """Best path decoding: per-frame argmax, collapse repeats, drop blanks

    Ties go to the lowest class index. The result is empty for an all-blank
    posteriorgram.
    """
    inventory = inventory or default_inventory()
    blank = ppg.n_classes - 1
    best = np.argmax(ppg.posteriors, axis=1)
    labels = []
    previous = None
    for label in best.tolist():
        if label != previous and label != blank:
            labels.append(label)
        previous = label
    return PhonemeSequence(tuple(labels), inventory)


def levenshtein(reference: Sequence[str], hypothesis: Sequence[str]) -> int:
    """Unit cost edit distance"""
    previous = list(range(len(hypothesis) + 1))
    for i, r in enumerate(reference, start=1):
        current = [i]
        for j, h in enumerate(hypothesis, start=1):
            current.append(
                min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (r != h))
            )
        previous = current
    return previous[-1]


def per(ref: PhonemeSequence, hyp: PhonemeSequence) -> float:
    """Phoneme error rate after folding both sequences to the scoring inventory

    The rate may exceed 1 for long hypotheses.

    :raise InvalidInput: If the folded reference is empty
    """
    reference = ref.folded()
    if not reference:
        raise InvalidInput("PER reference must not be empty")
    return levenshtein(reference, hyp.folded()) / len(reference)


def corpus_per(
    references: Sequence[PhonemeSequence], hypotheses: Sequence[PhonemeSequence]
) -> float:
    """Total edit distance over total folded reference length"""
    if len(references) != len(hypotheses):
        raise InvalidInput("Reference and hypothesis counts differ")
    errors = sum(levenshtein(r.folded(), h.folded()) for r, h in zip(references, hypotheses))
    total = sum(len(r.folded()) for r in references)
    if total == 0:
        raise InvalidInput("PER reference must not be empty")
    return errors / total


def to_checkpoint(
    model: PRModel, features: FeatureConfig, step: int
) -> ModelCheckpoint:
    """Snapshots a recognizer"""
    return ModelCheckpoint.from_module(
        "recognizer", model, model.config, features, step
    )


def from_checkpoint(ckpt: ModelCheckpoint) -> PRModel:
    """Rebuilds a recognizer in eval mode"""
    model = PRModel(from_dict(PRConfig, ckpt.config))
    ckpt.load_into(model)
    return model.eval()


__all__ = [
    "PhonemeSequence",
    "PPG",
    "PRModel",
    "build_pr_model",
    "train_pr",
    "extract_ppg",
    "greedy_decode",
    "per",
]
