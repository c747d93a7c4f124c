"""Autoregressive dilated convolution vocoder with mel conditioning

The mel spectrogram is upsampled to the audio rate by transposed convolutions
whose strides multiply to the hop size. A stack of gated, causal, dilated
convolutions predicts a 256-way mu-law categorical distribution of every sample
from the preceding samples, with the upsampled mel added inside each gate.

Sample ``t`` of the output depends on samples ``< t`` and the conditioning
only: the network input at position ``t`` is the code of sample ``t - 1``
(the mu-law code of silence before the first sample).
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .. import constants
from .._decorators import narrow_types
from ..checkpoint import ModelCheckpoint
from ..config import FeatureConfig, TrainingHyper, VocoderConfig, from_dict
from ..corpus import DatasetManifest, FeatureStore, load_waveform
from ..errors import AlignmentError, ConfigMismatch, InvalidInput, ShapeError
from . import _shared
from .audio_features import MelSpectrogram, Waveform, mu_law_compress, mu_law_expand

logger = logging.getLogger(__name__)

_SQRT_HALF = math.sqrt(0.5)


def receptive_field(cfg: VocoderConfig) -> int:
    """Number of input samples one output sample depends on

    ``1 + (kernel_size - 1) * sum(dilations)``
    """
    return 1 + (cfg.kernel_size - 1) * sum(cfg.dilations)


class UpsampleNet(nn.Module):
    """Transposed 2-D convolutions stretching ``[B x n_mels x T]`` to
    ``[B x n_mels x T * prod(strides)]``

    Mel bands are the height dimension so one small kernel is shared across
    bands.
    """

    def __init__(self, strides: Sequence[int]):
        super().__init__()
        self.strides = tuple(strides)
        self.layers = nn.ModuleList(
            nn.ConvTranspose2d(
                1, 1, kernel_size=(3, 2 * s), stride=(1, s), padding=(1, s // 2)
            )
            for s in self.strides
        )

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        x = mel.unsqueeze(1)
        for stride, layer in zip(self.strides, self.layers):
            length = x.size(-1) * stride
            x = F.leaky_relu(layer(x)[..., :length], 0.4)
        return x.squeeze(1)


class ResidualLayer(nn.Module):
    """Gated causal dilated convolution with local conditioning"""

    def __init__(self, cfg: VocoderConfig, dilation: int):
        super().__init__()
        self.dilation = dilation
        self.kernel_size = cfg.kernel_size
        self.conv = nn.Conv1d(
            cfg.residual_channels, cfg.gate_channels, cfg.kernel_size, dilation=dilation
        )
        self.condition = nn.Conv1d(cfg.n_mels, cfg.gate_channels, 1, bias=False)
        half = cfg.gate_channels // 2
        self.residual = nn.Conv1d(half, cfg.residual_channels, 1)
        self.skip = nn.Conv1d(half, cfg.skip_channels, 1)

    @property
    def context(self) -> int:
        """Past input positions the convolution reads"""
        return (self.kernel_size - 1) * self.dilation

    def _gate(self, h: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        content, gate = (h + self.condition(c)).chunk(2, dim=1)
        return torch.tanh(content) * torch.sigmoid(gate)

    def forward(self, x: torch.Tensor, c: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        h = self.conv(F.pad(x, (self.context, 0)))
        z = self._gate(h, c)
        return (x + self.residual(z)) * _SQRT_HALF, self.skip(z)

    def step(
        self, window: torch.Tensor, c: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Output of the newest position given the last ``context + 1`` inputs"""
        z = self._gate(self.conv(window), c)
        return (window[:, :, -1:] + self.residual(z)) * _SQRT_HALF, self.skip(z)


class VocoderModel(nn.Module):
    """Conditioning upsampler, residual stack and categorical output head"""

    def __init__(self, config: VocoderConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.upsample = UpsampleNet(config.upsample_strides)
        self.embed = nn.Embedding(config.out_classes, config.residual_channels)
        self.layers = nn.ModuleList(ResidualLayer(config, d) for d in config.dilations)
        self.post1 = nn.Conv1d(config.skip_channels, config.skip_channels, 1)
        self.post2 = nn.Conv1d(config.skip_channels, config.out_classes, 1)

    @property
    def start_code(self) -> int:
        """Mu-law code of silence fed before the first sample"""
        return self.config.out_classes // 2

    def head(self, skips: torch.Tensor) -> torch.Tensor:
        return self.post2(F.relu(self.post1(F.relu(skips))))

    def forward(self, inputs: torch.Tensor, condition: torch.Tensor) -> torch.Tensor:
        """Maps ``[B x T]`` input codes and ``[B x n_mels x T]`` upsampled
        conditioning to ``[B x out_classes x T]`` logits
        """
        x = self.embed(inputs).transpose(1, 2)
        skips = 0
        for layer in self.layers:
            x, skip = layer(x, condition)
            skips = skips + skip
        return self.head(skips)

    def shift(self, codes: torch.Tensor) -> torch.Tensor:
        """Teacher forcing inputs: the previous code at every position"""
        start = torch.full_like(codes[:, :1], self.start_code)
        return torch.cat([start, codes[:, :-1]], dim=1)


@narrow_types
def build_vocoder(cfg: VocoderConfig, seed: Optional[int] = None) -> VocoderModel:
    """Builds an untrained vocoder

    :raise ConfigMismatch: If the upsampling strides do not multiply to the hop
    """
    if seed is not None:
        torch.manual_seed(seed)
    model = VocoderModel(cfg)
    logger.debug(
        f"Built vocoder with {_shared.count_parameters(model)} parameters and a "
        f"receptive field of {receptive_field(cfg)} samples"
    )
    return model


def _mel_tensor(model: VocoderModel, m: MelSpectrogram) -> torch.Tensor:
    if m.n_bands != model.config.n_mels:
        raise ShapeError(f"Vocoder expects {model.config.n_mels} bands, got {m.n_bands}")
    if m.hop_samples != math.prod(model.config.upsample_strides):
        raise ConfigMismatch(
            f"Mel hop {m.hop_samples} does not match the upsampling factor "
            f"{math.prod(model.config.upsample_strides)}"
        )
    device = next(model.parameters()).device
    return torch.from_numpy(np.asarray(m.values, dtype=np.float32)).T.unsqueeze(0).to(device)


@narrow_types
def upsample_conditioning(model: VocoderModel, m: MelSpectrogram) -> np.ndarray:
    """Returns the ``[n_mels x n_frames * hop]`` conditioning series

    :raise ConfigMismatch: If the mel hop differs from the upsampling factor
    """
    with torch.inference_mode():
        return model.upsample(_mel_tensor(model, m))[0].cpu().numpy()


@dataclass(frozen=True, eq=False)
class VocoderExample:
    """Mu-law codes aligned with the mel frames they are conditioned on"""

    utt_id: str
    codes: np.ndarray
    mel: np.ndarray
    hop_samples: int

    def __post_init__(self):
        if self.codes.shape[0] != self.mel.shape[0] * self.hop_samples:
            raise AlignmentError(
                f"{self.utt_id}: {self.codes.shape[0]} samples do not match "
                f"{self.mel.shape[0]} frames of {self.hop_samples} samples"
            )


def align_codes(
    utt_id: str, w: Waveform, m: MelSpectrogram, channels: int = constants.MU_LAW_CHANNELS
) -> VocoderExample:
    """Pads (with silence) or trims a waveform to ``n_frames * hop`` samples
    and encodes it

    :raise AlignmentError: If the lengths differ by more than one hop
    """
    n = m.n_frames * m.hop_samples
    if abs(len(w) - n) > m.hop_samples:
        raise AlignmentError(
            f"{utt_id}: {len(w)} samples cannot be aligned with {m.n_frames} frames"
        )
    samples = np.zeros(n, dtype=np.float32)
    samples[: min(n, len(w))] = w.samples[:n]
    return VocoderExample(utt_id, mu_law_compress(samples, channels), m.values, m.hop_samples)


def load_examples(
    manifest: DatasetManifest,
    store: FeatureStore,
    conditioning: Optional[Callable[[MelSpectrogram], MelSpectrogram]] = None,
) -> List[VocoderExample]:
    """Pairs the audio of every manifest utterance with its mel spectrogram

    :param conditioning: Optional transform of the true mel spectrogram, e.g.
        the enhancement network
    :raise MissingFeature: If features have not been extracted
    """
    examples = []
    for record in manifest:
        mel = store.read_mel(record.utt_id)
        if conditioning is not None:
            mel = conditioning(mel)
        w = load_waveform(record.audio, store.features)
        examples.append(align_codes(record.utt_id, w, mel))
    return examples


class VocoderBatch:
    """Random fixed length windows of several examples"""

    def __init__(
        self,
        model: VocoderModel,
        examples: Sequence[VocoderExample],
        window_frames: int,
        rng: np.random.Generator,
    ):
        device = next(model.parameters()).device
        hop = examples[0].hop_samples
        frames = min(window_frames, min(e.mel.shape[0] for e in examples))
        codes = []
        conditions = []
        for e in examples:
            start = int(rng.integers(0, e.mel.shape[0] - frames + 1))
            mel = torch.from_numpy(np.asarray(e.mel, dtype=np.float32)).T.unsqueeze(0)
            condition = model.upsample(mel.to(device))
            conditions.append(condition[..., start * hop : (start + frames) * hop])
            codes.append(torch.from_numpy(e.codes[start * hop : (start + frames) * hop]))
        self.codes = torch.stack(codes).to(device)
        self.condition = torch.cat(conditions)


def cross_entropy(model: VocoderModel, codes: torch.Tensor, condition: torch.Tensor):
    """Teacher forced next sample cross entropy

    :return: Tuple of the mean loss and the ``[B x out_classes x T]`` logits
    """
    logits = model(model.shift(codes), condition)
    return F.cross_entropy(logits, codes), logits


@dataclass
class VocoderTrainingResult:
    """Outcome of :func:`.train_vocoder`"""

    model: VocoderModel
    loss_history: List[float]
    step: int


def train_examples(
    model: VocoderModel,
    examples: Sequence[VocoderExample],
    hyper: TrainingHyper,
    start_step: int = 0,
) -> List[float]:
    """Trains on random windows of ``hyper.window_frames`` frames"""
    hyper.validate()
    if not examples:
        raise InvalidInput("No vocoder training examples")
    _shared.seed_everything(hyper.seed)
    optimizer, scheduler = _shared.make_optimizer(model.parameters(), hyper)
    sampler = _shared.BatchSampler(len(examples), hyper.batch_size, hyper.seed)
    rng = np.random.default_rng(hyper.seed)

    history: List[float] = []
    model.train()
    for i in _shared.progress(range(hyper.steps), "train-vocoder"):
        batch = VocoderBatch(
            model, [examples[j] for j in next(sampler)], hyper.window_frames, rng
        )
        loss, _ = cross_entropy(model, batch.codes, batch.condition)
        _shared.optimizer_step(loss, model, optimizer, scheduler, hyper.grad_clip)
        history.append(loss.item())
        if (i + 1) % hyper.log_interval == 0:
            logger.info(
                f"train-vocoder step {start_step + i + 1}: cross entropy "
                f"{np.mean(history[-hyper.log_interval:]):.4f}"
            )
    model.eval()
    return history


def train_vocoder(
    model: VocoderModel,
    manifest: DatasetManifest,
    store: FeatureStore,
    hyper: TrainingHyper,
    start_step: int = 0,
    conditioning: Optional[Callable[[MelSpectrogram], MelSpectrogram]] = None,
) -> VocoderTrainingResult:
    """Trains the vocoder on ``<audio, mel>`` pairs of a corpus

    :param conditioning: Optional transform of the true mel spectrograms
    :raise MissingFeature: If features have not been extracted
    :raise AlignmentError: If audio and features cannot be aligned
    """
    manifest.require_non_empty()
    examples = load_examples(manifest, store, conditioning)
    history = train_examples(model, examples, hyper, start_step)
    return VocoderTrainingResult(model, history, start_step + hyper.steps)


def teacher_forced_accuracy(model: VocoderModel, example: VocoderExample) -> float:
    """Fraction of samples whose most likely class is the true code"""
    model.eval()
    with torch.inference_mode():
        device = next(model.parameters()).device
        mel = torch.from_numpy(np.asarray(example.mel, dtype=np.float32)).T.unsqueeze(0)
        codes = torch.from_numpy(example.codes).unsqueeze(0).to(device)
        _, logits = cross_entropy(model, codes, model.upsample(mel.to(device)))
        return float((logits.argmax(dim=1) == codes).float().mean())


def teacher_forced_loss(model: VocoderModel, example: VocoderExample) -> float:
    """Mean next sample cross entropy of a whole example"""
    model.eval()
    with torch.inference_mode():
        device = next(model.parameters()).device
        mel = torch.from_numpy(np.asarray(example.mel, dtype=np.float32)).T.unsqueeze(0)
        codes = torch.from_numpy(example.codes).unsqueeze(0).to(device)
        loss, _ = cross_entropy(model, codes, model.upsample(mel.to(device)))
        return loss.item()


@narrow_types
def generate(
    model: VocoderModel,
    m: MelSpectrogram,
    mode: str = constants.GenerationMode.ARGMAX,
    seed: int = 0,
    sample_rate: int = constants.SAMPLE_RATE,
) -> Waveform:
    """Generates ``n_frames * hop`` samples one at a time

    Every layer keeps a buffer of its last ``context + 1`` inputs so a step
    costs one output position per layer.

    :param mode: ARGMAX picks the most likely class, SAMPLE draws from the
        softmax with a generator seeded by ``seed``
    """
    mode = constants.GenerationMode(mode)
    model.eval()
    generator = _shared.make_generator(seed)
    with torch.inference_mode():
        condition = model.upsample(_mel_tensor(model, m))
        n_samples = condition.size(-1)
        device = condition.device
        buffers = [
            torch.zeros(1, model.config.residual_channels, layer.context + 1, device=device)
            for layer in model.layers
        ]
        code = torch.tensor([[model.start_code]], device=device)
        codes = np.empty(n_samples, dtype=np.int64)
        for t in _shared.progress(range(n_samples), "generate", leave=False):
            c = condition[:, :, t : t + 1]
            x = model.embed(code).transpose(1, 2)
            skips = 0
            for i, layer in enumerate(model.layers):
                buffers[i] = torch.cat([buffers[i][:, :, 1:], x], dim=2)
                x, skip = layer.step(buffers[i], c)
                skips = skips + skip
            logits = model.head(skips)[0, :, 0]
            if mode == constants.GenerationMode.ARGMAX:
                index = int(torch.argmax(logits))
            else:
                probabilities = F.softmax(logits.double(), dim=0).cpu()
                index = int(torch.multinomial(probabilities, 1, generator=generator))
            codes[t] = index
            code = torch.tensor([[index]], device=device)
    samples = np.clip(mu_law_expand(codes, model.config.out_classes), -1.0, 1.0)
    return Waveform(samples, sample_rate)


def probabilities(model: VocoderModel, codes: np.ndarray, m: MelSpectrogram) -> np.ndarray:
    """Teacher forced ``[T x out_classes]`` softmax of every sample"""
    model.eval()
    with torch.inference_mode():
        condition = model.upsample(_mel_tensor(model, m))
        inputs = torch.from_numpy(np.asarray(codes, dtype=np.int64)).unsqueeze(0)
        logits = model(model.shift(inputs.to(condition.device)), condition)
        return F.softmax(logits.double(), dim=1)[0].T.cpu().numpy()


def to_checkpoint(model: VocoderModel, features: FeatureConfig, step: int) -> ModelCheckpoint:
    """Snapshots a vocoder"""
    return ModelCheckpoint.from_module(
        "vocoder",
        model,
        model.config,
        features,
        step,
        {"receptive_field": receptive_field(model.config)},
    )


def from_checkpoint(ckpt: ModelCheckpoint) -> VocoderModel:
    """Rebuilds a vocoder in eval mode"""
    model = VocoderModel(from_dict(VocoderConfig, ckpt.config))
    ckpt.load_into(model)
    return model.eval()


__all__ = [
    "VocoderConfig",
    "VocoderModel",
    "upsample_conditioning",
    "receptive_field",
    "train_vocoder",
    "generate",
]
