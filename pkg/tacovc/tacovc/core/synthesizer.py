"""PPG-to-spectrogram sequence-to-sequence synthesizer

The network follows the Tacotron layout with the character embedding replaced
by the posteriorgram: a pre-net and CBHG encoder over PPG frames, a
location-sensitive attention decoder emitting ``r`` mel frames per step, and a
CBHG post-net predicting the linear spectrogram.

The decoder never predicts when to stop. The target has the same number of
frames ``L`` as the source PPG, so it runs exactly ``ceil(L / r)`` steps and
the output is trimmed to ``L`` frames.

During training the previous frame fed back to the decoder is the ground truth
with probability :func:`.rate_at` and the model's own (detached) prediction
otherwise. The coin is flipped per utterance and decoder step from a dedicated
generator, so the dropout random stream is unaffected by the schedule.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .._decorators import narrow_types
from ..checkpoint import ModelCheckpoint
from ..config import (
    FeatureConfig,
    ScheduledSamplingSchedule,
    SynthesizerConfig,
    TrainingHyper,
    from_dict,
)
from ..corpus import DatasetManifest, FeatureStore
from ..errors import AlignmentError, InvalidInput, ShapeError
from .. import constants
from . import _shared
from .audio_features import LinearSpectrogram, MelSpectrogram
from .phoneme_recognizer import PPG, PRModel, extract_ppg

logger = logging.getLogger(__name__)


def rate_at(sch: ScheduledSamplingSchedule, step: int) -> float:
    """Probability of feeding the true previous frame at a training step

    Decays linearly from ``start_rate`` at step 0 to ``final_rate`` at
    ``decay_steps`` and stays there. A zero-length decay still starts at
    ``start_rate`` and drops to ``final_rate`` from step 1.

    :raise InvalidInput: If ``step`` is negative
    """
    if step < 0:
        raise InvalidInput(f"Training step must be non-negative, got {step}")
    if step == 0:
        return sch.start_rate
    if step >= sch.decay_steps:
        return sch.final_rate
    return sch.start_rate + (sch.final_rate - sch.start_rate) * step / sch.decay_steps


class PreNet(nn.Module):
    """Fully connected bottleneck with ReLU and dropout"""

    def __init__(self, in_dim: int, dims: Sequence[int], dropout: float):
        super().__init__()
        sizes = [in_dim] + list(dims)
        self.layers = nn.ModuleList(
            nn.Linear(i, o) for i, o in zip(sizes[:-1], sizes[1:])
        )
        self.dropout = dropout

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            x = F.dropout(F.relu(layer(x)), self.dropout, training=self.training)
        return x


class BatchNormConv(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, relu: bool = True):
        super().__init__()
        self.conv = nn.Conv1d(
            in_channels, out_channels, kernel, padding=kernel // 2, bias=False
        )
        self.bnorm = nn.BatchNorm1d(out_channels)
        self.relu = relu

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.conv(x)
        x = F.relu(x) if self.relu else x
        return self.bnorm(x)


class HighwayNetwork(nn.Module):
    def __init__(self, size: int):
        super().__init__()
        self.W1 = nn.Linear(size, size)
        self.W2 = nn.Linear(size, size)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        g = torch.sigmoid(self.W2(x))
        return g * F.relu(self.W1(x)) + (1.0 - g) * x


class CBHG(nn.Module):
    """Convolution bank, highway network and bidirectional GRU

    Maps ``[B x in_channels x T]`` to ``[B x T x channels]``.
    """

    def __init__(
        self,
        K: int,
        in_channels: int,
        channels: int,
        proj_channels: Tuple[int, int],
        num_highways: int,
    ):
        super().__init__()
        self.conv1d_bank = nn.ModuleList(
            BatchNormConv(in_channels, channels, k) for k in range(1, K + 1)
        )
        self.maxpool = nn.MaxPool1d(kernel_size=2, stride=1, padding=1)
        self.conv_project1 = BatchNormConv(K * channels, proj_channels[0], 3)
        self.conv_project2 = BatchNormConv(
            proj_channels[0], proj_channels[1], 3, relu=False
        )
        self.pre_highway = (
            nn.Linear(proj_channels[1], channels, bias=False)
            if proj_channels[1] != channels
            else None
        )
        self.highways = nn.ModuleList(HighwayNetwork(channels) for _ in range(num_highways))
        self.rnn = nn.GRU(channels, channels // 2, batch_first=True, bidirectional=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        residual = x
        seq_len = x.size(-1)
        bank = torch.cat([conv(x)[:, :, :seq_len] for conv in self.conv1d_bank], dim=1)
        x = self.maxpool(bank)[:, :, :seq_len]
        x = self.conv_project2(self.conv_project1(x))
        x = (x + residual).transpose(1, 2)
        if self.pre_highway is not None:
            x = self.pre_highway(x)
        for highway in self.highways:
            x = highway(x)
        self.rnn.flatten_parameters()
        x, _ = self.rnn(x)
        return x


class LocationSensitiveAttention(nn.Module):
    """Additive attention with convolutional features of the cumulative
    attention weights
    """

    def __init__(self, query_dim: int, attention_dim: int, filters: int, kernel: int):
        super().__init__()
        self.conv = nn.Conv1d(1, filters, kernel, padding=(kernel - 1) // 2, bias=True)
        self.L = nn.Linear(filters, attention_dim, bias=False)
        self.W = nn.Linear(query_dim, attention_dim, bias=True)
        self.v = nn.Linear(attention_dim, 1, bias=False)

    def forward(
        self,
        processed_memory: torch.Tensor,
        query: torch.Tensor,
        cumulative: torch.Tensor,
        mask: torch.Tensor,
    ) -> torch.Tensor:
        """Returns ``[B x L]`` attention weights"""
        processed_location = self.L(self.conv(cumulative.unsqueeze(1)).transpose(1, 2))
        u = self.v(
            torch.tanh(self.W(query).unsqueeze(1) + processed_memory + processed_location)
        ).squeeze(-1)
        u = u.masked_fill(~mask, float("-inf"))
        return F.softmax(u, dim=1)


class DecoderState(NamedTuple):
    attention_hidden: torch.Tensor
    rnn1_hidden: torch.Tensor
    rnn2_hidden: torch.Tensor
    context: torch.Tensor
    cumulative: torch.Tensor


class Decoder(nn.Module):
    """Attention RNN and two residual GRUs emitting ``r`` frames per step"""

    def __init__(self, config: SynthesizerConfig):
        super().__init__()
        self.n_mels = config.n_mels
        self.r = config.reduction_factor
        self.decoder_dim = config.decoder_dim
        prenet_dims = (config.decoder_dim, config.decoder_dim // 2)
        self.prenet = PreNet(config.n_mels, prenet_dims, config.prenet_dropout)
        self.memory_proj = nn.Linear(config.encoder_dim, config.attention_dim, bias=False)
        self.attention = LocationSensitiveAttention(
            config.decoder_dim,
            config.attention_dim,
            config.attention_filters,
            config.attention_kernel,
        )
        self.attn_rnn = nn.GRUCell(config.encoder_dim + prenet_dims[-1], config.decoder_dim)
        self.rnn_input = nn.Linear(config.encoder_dim + config.decoder_dim, config.decoder_dim)
        self.res_rnn1 = nn.GRUCell(config.decoder_dim, config.decoder_dim)
        self.res_rnn2 = nn.GRUCell(config.decoder_dim, config.decoder_dim)
        self.mel_proj = nn.Linear(config.decoder_dim, config.n_mels * self.r)

    def initial_state(self, memory: torch.Tensor) -> DecoderState:
        batch_size, length, encoder_dim = memory.shape
        zeros = memory.new_zeros((batch_size, self.decoder_dim))
        return DecoderState(
            zeros,
            zeros,
            zeros,
            memory.new_zeros((batch_size, encoder_dim)),
            memory.new_zeros((batch_size, length)),
        )

    def step(
        self,
        memory: torch.Tensor,
        processed_memory: torch.Tensor,
        mask: torch.Tensor,
        previous_frame: torch.Tensor,
        state: DecoderState,
    ) -> Tuple[torch.Tensor, torch.Tensor, DecoderState]:
        """Decodes one step

        :return: Tuple of ``[B x r x n_mels]`` frames, ``[B x L]`` attention
            weights and the next state
        """
        prenet_out = self.prenet(previous_frame)
        attention_hidden = self.attn_rnn(
            torch.cat([state.context, prenet_out], dim=-1), state.attention_hidden
        )
        weights = self.attention(processed_memory, attention_hidden, state.cumulative, mask)
        context = torch.bmm(weights.unsqueeze(1), memory).squeeze(1)

        x = self.rnn_input(torch.cat([context, attention_hidden], dim=-1))
        rnn1_hidden = self.res_rnn1(x, state.rnn1_hidden)
        x = x + rnn1_hidden
        rnn2_hidden = self.res_rnn2(x, state.rnn2_hidden)
        x = x + rnn2_hidden

        frames = self.mel_proj(x).view(x.size(0), self.r, self.n_mels)
        next_state = DecoderState(
            attention_hidden, rnn1_hidden, rnn2_hidden, context, state.cumulative + weights
        )
        return frames, weights, next_state


class SynthesizerOutput(NamedTuple):
    mel: torch.Tensor
    """``[B x steps * r x n_mels]``"""
    linear: torch.Tensor
    """``[B x steps * r x n_linear]``"""
    alignments: torch.Tensor
    """``[B x steps x L]``"""


class SynthesizerModel(nn.Module):
    """PPG pre-net and CBHG encoder, attention decoder and CBHG post-net"""

    def __init__(self, config: SynthesizerConfig):
        super().__init__()
        config.validate()
        self.config = config
        prenet_out = config.prenet_dims[-1]
        self.encoder_prenet = PreNet(config.ppg_dim, config.prenet_dims, config.prenet_dropout)
        self.encoder_cbhg = CBHG(
            config.encoder_bank_k,
            prenet_out,
            config.encoder_dim,
            (config.encoder_dim, prenet_out),
            config.encoder_highways,
        )
        self.decoder = Decoder(config)
        self.postnet = CBHG(
            config.postnet_bank_k,
            config.n_mels,
            config.postnet_dim,
            (config.postnet_dim, config.n_mels),
            config.postnet_highways,
        )
        self.post_proj = nn.Linear(config.postnet_dim, config.n_linear)
        _shared.xavier_init(self)

    def n_steps(self, n_frames: int) -> int:
        """Decoder steps needed for ``n_frames`` output frames"""
        return math.ceil(n_frames / self.config.reduction_factor)

    def forward(
        self,
        ppg: torch.Tensor,
        ppg_lengths: torch.Tensor,
        n_steps: int,
        target_mel: Optional[torch.Tensor] = None,
        true_rate: Optional[float] = None,
        generator: Optional[torch.Generator] = None,
    ) -> SynthesizerOutput:
        """Runs the network for exactly ``n_steps`` decoder steps

        :param ppg: ``[B x L x C]`` posteriorgrams
        :param ppg_lengths: Real length of every PPG
        :param n_steps: Number of decoder steps
        :param target_mel: ``[B x n_steps * r x n_mels]`` targets for teacher
            forcing, None to feed back the model's own predictions
        :param true_rate: Probability of feeding the target frame, None for pure
            teacher forcing
        :param generator: Source of the scheduled sampling coins
        """
        r = self.config.reduction_factor
        batch_size, length, _ = ppg.shape
        mask = _shared.length_mask(ppg_lengths.to(ppg.device), length)

        x = self.encoder_prenet(ppg).transpose(1, 2)
        memory = self.encoder_cbhg(x)
        processed_memory = self.decoder.memory_proj(memory)

        state = self.decoder.initial_state(memory)
        previous = ppg.new_zeros((batch_size, self.config.n_mels))
        frames: List[torch.Tensor] = []
        alignments: List[torch.Tensor] = []
        for t in range(n_steps):
            if t > 0:
                own = frames[-1][:, -1]
                if target_mel is None:
                    previous = own
                else:
                    truth = target_mel[:, t * r - 1]
                    if true_rate is None:
                        previous = truth
                    else:
                        coin = torch.rand(batch_size, generator=generator) < true_rate
                        previous = torch.where(
                            coin.to(ppg.device).unsqueeze(1), truth, own.detach()
                        )
            step_frames, weights, state = self.decoder.step(
                memory, processed_memory, mask, previous, state
            )
            frames.append(step_frames)
            alignments.append(weights)

        mel = torch.cat(frames, dim=1)
        linear = self.post_proj(self.postnet(mel.transpose(1, 2)))
        return SynthesizerOutput(mel, linear, torch.stack(alignments, dim=1))


@narrow_types
def build_synthesizer(cfg: SynthesizerConfig, seed: Optional[int] = None) -> SynthesizerModel:
    """Builds an untrained synthesizer

    :param seed: Optional seed of the weight initialization
    """
    if seed is not None:
        torch.manual_seed(seed)
    model = SynthesizerModel(cfg)
    logger.debug(f"Built synthesizer with {_shared.count_parameters(model)} parameters")
    return model


def _loss_terms(
    pred_mel: torch.Tensor,
    pred_lin: torch.Tensor,
    true_mel: torch.Tensor,
    true_lin: torch.Tensor,
    mask: Optional[torch.Tensor] = None,
) -> Tuple[torch.Tensor, torch.Tensor]:
    if pred_mel.shape != true_mel.shape or pred_lin.shape != true_lin.shape:
        raise ShapeError(
            f"Prediction shapes {tuple(pred_mel.shape)}, {tuple(pred_lin.shape)} do not "
            f"match targets {tuple(true_mel.shape)}, {tuple(true_lin.shape)}"
        )
    if pred_mel.shape[:-1] != pred_lin.shape[:-1]:
        raise ShapeError("Mel and linear predictions have different frame counts")
    if mask is None:
        return (pred_mel - true_mel).abs().mean(), (pred_lin - true_lin).abs().mean()
    weights = mask.to(pred_mel.dtype).unsqueeze(-1)
    n_real = weights.sum()
    mel_l1 = ((pred_mel - true_mel).abs() * weights).sum() / (n_real * pred_mel.size(-1))
    lin_l1 = ((pred_lin - true_lin).abs() * weights).sum() / (n_real * pred_lin.size(-1))
    return mel_l1, lin_l1


def taco_loss(
    pred_mel: torch.Tensor,
    pred_lin: torch.Tensor,
    true_mel: torch.Tensor,
    true_lin: torch.Tensor,
    mask: Optional[torch.Tensor] = None,
    mel_weight: float = 1.0,
    linear_weight: float = 1.0,
) -> torch.Tensor:
    """Mean L1 of the mel prediction plus mean L1 of the linear prediction

    :param mask: Optional ``[B x T]`` mask of real frames; padded frames do not
        contribute
    :raise ShapeError: If predictions and targets differ in shape
    """
    mel_l1, lin_l1 = _loss_terms(pred_mel, pred_lin, true_mel, true_lin, mask)
    return mel_weight * mel_l1 + linear_weight * lin_l1


@dataclass(frozen=True, eq=False)
class SynthesisExample:
    """One ``<PPG, mel, linear>`` training triple"""

    utt_id: str
    ppg: np.ndarray
    mel: np.ndarray
    linear: np.ndarray

    def __post_init__(self):
        if not self.ppg.shape[0] == self.mel.shape[0] == self.linear.shape[0]:
            raise AlignmentError(
                f"{self.utt_id}: PPG has {self.ppg.shape[0]} frames, targets have "
                f"{self.mel.shape[0]} and {self.linear.shape[0]}"
            )


class SynthesisBatch(NamedTuple):
    ppg: torch.Tensor
    lengths: torch.Tensor
    mel: torch.Tensor
    linear: torch.Tensor
    mask: torch.Tensor
    n_steps: int


def collate(examples: Sequence[SynthesisExample], r: int) -> SynthesisBatch:
    """Pads a batch; targets are padded with the floor value to a multiple of
    ``r`` frames
    """
    ppg, lengths = _shared.pad_sequences([e.ppg for e in examples])
    mel, _ = _shared.pad_sequences([e.mel for e in examples], multiple=r)
    linear, _ = _shared.pad_sequences([e.linear for e in examples], multiple=r)
    return SynthesisBatch(
        ppg, lengths, mel, linear, _shared.length_mask(lengths, mel.size(1)), mel.size(1) // r
    )


class StepLoss(NamedTuple):
    total: float
    mel: float
    linear: float


def train_step(
    model: SynthesizerModel,
    batch: SynthesisBatch,
    schedule: Optional[ScheduledSamplingSchedule],
    step: int,
    optimizer: torch.optim.Optimizer,
    scheduler: torch.optim.lr_scheduler.LambdaLR,
    generator: torch.Generator,
    grad_clip: float = 1.0,
) -> StepLoss:
    """One optimizer update on a batch

    :param schedule: Scheduled sampling schedule, None for pure teacher forcing
    :param step: Schedule step of this update
    """
    device = next(model.parameters()).device
    true_rate = rate_at(schedule, step) if schedule is not None else None
    model.train()
    output = model(
        batch.ppg.to(device),
        batch.lengths,
        batch.n_steps,
        target_mel=batch.mel.to(device),
        true_rate=true_rate,
        generator=generator,
    )
    mel_l1, lin_l1 = _loss_terms(
        output.mel, output.linear, batch.mel.to(device), batch.linear.to(device), batch.mask.to(device)
    )
    loss = model.config.mel_loss_weight * mel_l1 + model.config.linear_loss_weight * lin_l1
    _shared.optimizer_step(loss, model, optimizer, scheduler, grad_clip)
    return StepLoss(loss.item(), mel_l1.item(), lin_l1.item())


@dataclass
class SynthesizerTrainingResult:
    """Outcome of :func:`.train_synthesizer`"""

    model: SynthesizerModel
    loss_history: List[float]
    mel_history: List[float]
    """Mel L1 term of every step"""
    step: int
    """Schedule step reached"""


def load_examples(
    pr: PRModel, manifest: DatasetManifest, store: FeatureStore
) -> List[SynthesisExample]:
    """Builds ``<PPG, mel, linear>`` triples from the stored true features

    :raise MissingFeature: If features have not been extracted
    """
    examples = []
    for record in manifest:
        mel = store.read_mel(record.utt_id)
        linear = store.read_linear(record.utt_id)
        ppg = extract_ppg(pr, mel)
        examples.append(
            SynthesisExample(record.utt_id, ppg.posteriors, mel.values, linear.values)
        )
    return examples


def train_examples(
    model: nn.Module,
    examples: Sequence[SynthesisExample],
    hyper: TrainingHyper,
    schedule: Optional[ScheduledSamplingSchedule],
    start_step: int = 0,
    desc: str = "train-syn",
    forward_model: Optional[SynthesizerModel] = None,
) -> Tuple[List[float], List[float]]:
    """Trains on precomputed examples for ``hyper.steps`` updates

    :param model: Module whose trainable parameters are optimized
    :param forward_model: Synthesizer run on the batches, defaults to ``model``
    :return: Tuple of total and mel loss histories
    """
    synthesizer = forward_model or model
    _shared.seed_everything(hyper.seed)
    optimizer, scheduler = _shared.make_optimizer(
        [p for p in model.parameters() if p.requires_grad], hyper
    )
    sampler = _shared.BatchSampler(len(examples), hyper.batch_size, hyper.seed)
    generator = _shared.make_generator(hyper.seed + 1)
    r = synthesizer.config.reduction_factor  # type: ignore[union-attr]

    history: List[float] = []
    mel_history: List[float] = []
    for i in _shared.progress(range(hyper.steps), desc):
        batch = collate([examples[j] for j in next(sampler)], r)
        loss = train_step(
            synthesizer,  # type: ignore[arg-type]
            batch,
            schedule,
            start_step + i,
            optimizer,
            scheduler,
            generator,
            hyper.grad_clip,
        )
        history.append(loss.total)
        mel_history.append(loss.mel)
        if (i + 1) % hyper.log_interval == 0:
            rate = rate_at(schedule, start_step + i) if schedule is not None else 1.0
            logger.info(
                f"{desc} step {start_step + i + 1}: L_T "
                f"{np.mean(history[-hyper.log_interval:]):.4f}, mel L1 "
                f"{np.mean(mel_history[-hyper.log_interval:]):.4f}, true rate {rate:.3f}"
            )
    return history, mel_history


def train_synthesizer(
    model: SynthesizerModel,
    pr: PRModel,
    manifest: DatasetManifest,
    store: FeatureStore,
    hyper: TrainingHyper,
    schedule: Optional[ScheduledSamplingSchedule] = None,
    start_step: int = 0,
) -> SynthesizerTrainingResult:
    """Trains the synthesizer on ``<PPG, audio features>`` pairs

    PPGs come from the frozen recognizer.

    :param schedule: Scheduled sampling schedule, defaults to the model
        configuration spanning ``hyper.steps``
    :param start_step: Schedule step to resume from
    :raise MissingFeature: If features have not been extracted
    :raise AlignmentError: If a PPG and its targets differ in length
    """
    hyper.validate()
    manifest.require_non_empty()
    schedule = schedule or model.config.schedule(hyper.steps)
    examples = load_examples(pr, manifest, store)
    history, mel_history = train_examples(model, examples, hyper, schedule, start_step)
    model.eval()
    return SynthesizerTrainingResult(model, history, mel_history, start_step + hyper.steps)


def infer(model: SynthesizerModel, ppg: PPG) -> SynthesizerOutput:
    """Free-running forward pass of a single PPG, untrimmed"""
    if ppg.n_classes != model.config.ppg_dim:
        raise ShapeError(
            f"Synthesizer expects {model.config.ppg_dim} PPG classes, got {ppg.n_classes}"
        )
    device = next(model.parameters()).device
    was_training = model.training
    model.eval()
    with torch.inference_mode():
        output = model(
            torch.from_numpy(np.asarray(ppg.posteriors, dtype=np.float32))
            .unsqueeze(0)
            .to(device),
            torch.tensor([ppg.n_frames]),
            model.n_steps(ppg.n_frames),
        )
    model.train(was_training)
    return output


@narrow_types
def synthesize(model: SynthesizerModel, ppg: PPG) -> Tuple[MelSpectrogram, LinearSpectrogram]:
    """Predicts spectrograms with exactly as many frames as the PPG

    The decoder runs ``ceil(L / r)`` steps; the ``ceil(L / r) * r`` frames are
    trimmed to ``L`` and clamped to [0, 1].

    :raise ShapeError: If the PPG class count differs from the model input
    """
    output = infer(model, ppg)
    n = ppg.n_frames
    mel = output.mel[0, :n].clamp(0.0, 1.0).cpu().numpy()
    linear = output.linear[0, :n].clamp(0.0, 1.0).cpu().numpy()
    return MelSpectrogram(mel, role=constants.Role.SYNTH_YHAT), LinearSpectrogram(linear)


def attention_alignment(model: SynthesizerModel, ppg: PPG) -> np.ndarray:
    """Returns the ``[steps x L]`` free-running attention weights"""
    return infer(model, ppg).alignments[0].cpu().numpy()


def attention_monotonicity(alignment: np.ndarray) -> float:
    """Fraction of decoder steps whose most attended encoder frame does not
    move backwards
    """
    if alignment.shape[0] < 2:
        return 1.0
    peaks = np.argmax(alignment, axis=1)
    return float(np.mean(np.diff(peaks) >= 0))


def to_checkpoint(
    model: SynthesizerModel,
    features: FeatureConfig,
    step: int,
    schedule_step: Optional[int] = None,
) -> ModelCheckpoint:
    """Snapshots a synthesizer with its schedule step

    :param schedule_step: Scheduled sampling step reached, defaults to ``step``
    """
    return ModelCheckpoint.from_module(
        "synthesizer",
        model,
        model.config,
        features,
        step,
        {"schedule_step": step if schedule_step is None else schedule_step},
    )


def from_checkpoint(ckpt: ModelCheckpoint) -> SynthesizerModel:
    """Rebuilds a synthesizer in eval mode"""
    model = SynthesizerModel(from_dict(SynthesizerConfig, ckpt.config))
    ckpt.load_into(model)
    return model.eval()


__all__ = [
    "ScheduledSamplingSchedule",
    "SynthesizerConfig",
    "SynthesizerModel",
    "rate_at",
    "taco_loss",
    "train_step",
    "train_synthesizer",
    "synthesize",
    "attention_monotonicity",
]
