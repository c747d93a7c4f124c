"""Configuration of the feature extractor, the networks and their training recipes

Configurations are frozen dataclasses. Defaults live in the dataclasses
themselves; the presets in ``params/*.yaml`` (and an optional user supplied YAML
file) are overlaid on top of them with :meth:`.PipelineConfig.from_preset`.

Feature parameters are the single source of truth for every network in one
pipeline: :meth:`.FeatureConfig.hash` is embedded in every checkpoint and
feature file sidecar, and mixed hashes are refused.
"""
import dataclasses
import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import (
    Any,
    Dict,
    Optional,
    Tuple,
    Type,
    TypeVar,
    get_args,
    get_origin,
    get_type_hints,
)

import yaml

from . import constants
from .errors import ConfigMismatch, InvalidConfig

logger = logging.getLogger(__name__)

C = TypeVar("C")

PARAMS_DIR = os.path.join(os.path.dirname(__file__), "params")
"""Directory of the shipped parameter presets"""


@dataclass(frozen=True)
class FeatureConfig:
    """Acoustic feature extraction parameters shared by all networks"""

    sample_rate: int = constants.SAMPLE_RATE
    n_fft: int = constants.N_FFT
    hop_samples: int = constants.HOP_SAMPLES
    n_mels: int = constants.N_MELS
    fmin: float = constants.MEL_FMIN
    fmax: float = constants.MEL_FMAX
    mel_scale: str = constants.MEL_SCALE
    min_level_db: float = constants.MIN_LEVEL_DB
    max_level_db: float = constants.MAX_LEVEL_DB
    center: bool = True
    pad_mode: str = "reflect"
    preemphasis: Optional[float] = None
    """Pre-emphasis coefficient, or None to disable (the default)"""
    resample_kaiser_beta: float = 8.6
    """Kaiser window beta of the polyphase resampling filter"""
    mu_law_channels: int = constants.MU_LAW_CHANNELS
    mu_law_rounding: str = constants.MU_LAW_ROUNDING

    @property
    def n_linear(self) -> int:
        """Number of linear spectrogram bins"""
        return self.n_fft // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        """Number of STFT frames for a waveform of ``n_samples`` samples"""
        return n_samples // self.hop_samples + 1

    def validate(self) -> None:
        """Raises :class:`.InvalidConfig` if the parameters are inconsistent"""
        if self.sample_rate <= 0 or self.hop_samples <= 0 or self.n_fft <= 0:
            raise InvalidConfig("Sample rate, FFT size and hop must be positive")
        if not 0 < self.fmin < self.fmax <= self.sample_rate / 2:
            raise InvalidConfig(
                f"Mel range [{self.fmin}, {self.fmax}] must lie inside "
                f"(0, {self.sample_rate / 2}]"
            )
        if self.min_level_db >= self.max_level_db:
            raise InvalidConfig("min_level_db must be lower than max_level_db")
        if self.mel_scale not in ("slaney", "htk"):
            raise InvalidConfig(f"Unknown mel scale {self.mel_scale}")
        if self.mu_law_rounding != constants.MU_LAW_ROUNDING:
            raise InvalidConfig(f"Unsupported mu-law rounding {self.mu_law_rounding}")

    def hash(self) -> str:
        """Returns a short stable digest of the extraction parameters"""
        canonical = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[
            : constants.FEATURE_HASH_LENGTH
        ]


@dataclass(frozen=True)
class PRConfig:
    """Phoneme recognizer architecture

    The default is the desk-scale 4 x 64 channel stack. Every layer must keep
    the time resolution of its input.
    """

    n_mels: int = constants.N_MELS
    n_classes: int = constants.PPG_DIM
    channels: Tuple[int, ...] = (64, 64, 64, 64)
    kernel_sizes: Tuple[int, ...] = (3, 3, 3, 3)
    strides: Tuple[int, ...] = (1, 1, 1, 1)
    dilations: Tuple[int, ...] = (1, 1, 1, 1)
    leaky_relu_slope: float = 0.1
    dropout: float = 0.0

    @property
    def blank_id(self) -> int:
        """CTC blank class id (the last class)"""
        return self.n_classes - 1

    def validate(self) -> None:
        """Raises :class:`.InvalidConfig` if the stack would not preserve time"""
        n_layers = len(self.channels)
        if n_layers == 0:
            raise InvalidConfig("Recognizer needs at least one convolutional layer")
        if not (
            len(self.kernel_sizes) == len(self.strides) == len(self.dilations)
            == n_layers
        ):
            raise InvalidConfig(
                "channels, kernel_sizes, strides and dilations must have equal length"
            )
        for i, (kernel, stride) in enumerate(zip(self.kernel_sizes, self.strides)):
            if stride != 1:
                raise InvalidConfig(
                    f"Layer {i} has stride {stride}: temporal downsampling is not "
                    f"allowed, PPGs must stay frame level"
                )
            if kernel % 2 != 1:
                raise InvalidConfig(
                    f"Layer {i} has even kernel size {kernel}: cannot preserve "
                    f"the time dimension with symmetric padding"
                )
        if self.n_classes < 2:
            raise InvalidConfig("Need at least one phone class and the blank")
        if not 0.0 <= self.leaky_relu_slope < 1.0:
            raise InvalidConfig("Leaky-ReLU slope must be in [0, 1)")


@dataclass(frozen=True)
class ScheduledSamplingSchedule:
    """Linearly decayed probability of feeding the true previous frame to the
    decoder
    """

    start_rate: float = 1.0
    final_rate: float = 0.33
    decay_steps: int = 5000

    def validate(self) -> None:
        """Raises :class:`.InvalidConfig` if the schedule is not non-increasing"""
        if not 0.0 < self.final_rate <= 1.0:
            raise InvalidConfig("Final true-sample rate must be in (0, 1]")
        if not self.final_rate <= self.start_rate <= 1.0:
            raise InvalidConfig("Start rate must be in [final_rate, 1]")
        if self.decay_steps < 0:
            raise InvalidConfig("decay_steps must be non-negative")


@dataclass(frozen=True)
class SynthesizerConfig:
    """PPG-to-spectrogram sequence-to-sequence network

    Desk-scale widths are the defaults, see ``params/paper.yaml`` for the
    full-size preset.
    """

    ppg_dim: int = constants.PPG_DIM
    n_mels: int = constants.N_MELS
    n_linear: int = constants.N_LINEAR
    reduction_factor: int = 3
    prenet_dims: Tuple[int, ...] = (128, 128)
    prenet_dropout: float = 0.5
    encoder_dim: int = 128
    encoder_bank_k: int = 8
    encoder_highways: int = 4
    decoder_dim: int = 256
    attention_dim: int = 128
    attention_filters: int = 32
    attention_kernel: int = 31
    postnet_bank_k: int = 8
    postnet_dim: int = 128
    postnet_highways: int = 4
    mel_loss_weight: float = 1.0
    linear_loss_weight: float = 1.0
    ss_start_rate: float = 1.0
    ss_final_rate: float = 0.33
    ss_decay_steps: Optional[int] = None
    """Decay horizon of scheduled sampling, None for the planned training steps"""

    def schedule(self, total_steps: int) -> ScheduledSamplingSchedule:
        """Returns the scheduled sampling schedule for a run of ``total_steps``"""
        decay_steps = self.ss_decay_steps if self.ss_decay_steps is not None else total_steps
        schedule = ScheduledSamplingSchedule(
            start_rate=self.ss_start_rate,
            final_rate=self.ss_final_rate,
            decay_steps=decay_steps,
        )
        schedule.validate()
        return schedule

    def validate(self) -> None:
        """Raises :class:`.InvalidConfig` if the parameters are inconsistent"""
        if self.reduction_factor < 1:
            raise InvalidConfig("Reduction factor must be at least 1")
        if self.encoder_dim % 2 != 0 or self.postnet_dim % 2 != 0:
            raise InvalidConfig(
                "encoder_dim and postnet_dim must be even (bidirectional GRU)"
            )
        if not self.prenet_dims:
            raise InvalidConfig("Pre-net needs at least one layer")
        if self.attention_kernel % 2 != 1:
            raise InvalidConfig("attention_kernel must be odd")
        ScheduledSamplingSchedule(
            self.ss_start_rate, self.ss_final_rate, self.ss_decay_steps or 0
        ).validate()


@dataclass(frozen=True)
class VocoderConfig:
    """Autoregressive dilated convolution vocoder

    The desk default shrinks the dilation cycle to 1..128; the paper preset
    restores two stacks of 1..512.
    """

    n_mels: int = constants.N_MELS
    hop_samples: int = constants.HOP_SAMPLES
    upsample_strides: Tuple[int, ...] = (16, 16)
    n_stacks: int = 2
    layers_per_stack: int = 8
    kernel_size: int = 2
    residual_channels: int = 64
    gate_channels: int = 128
    skip_channels: int = 64
    out_classes: int = constants.MU_LAW_CHANNELS

    @property
    def dilations(self) -> Tuple[int, ...]:
        """Dilation of every layer in order"""
        return tuple(
            2**i for _ in range(self.n_stacks) for i in range(self.layers_per_stack)
        )

    def validate(self) -> None:
        """Raises :class:`.ConfigMismatch` if the upsampler does not match the hop
        and :class:`.InvalidConfig` for other inconsistencies
        """
        if math.prod(self.upsample_strides) != self.hop_samples:
            raise ConfigMismatch(
                f"Product of upsampling strides {self.upsample_strides} is "
                f"{math.prod(self.upsample_strides)}, expected hop "
                f"{self.hop_samples}"
            )
        if self.kernel_size < 1 or self.n_stacks < 1 or self.layers_per_stack < 1:
            raise InvalidConfig("kernel_size, n_stacks and layers_per_stack must be >= 1")
        if self.gate_channels % 2 != 0:
            raise InvalidConfig("gate_channels must be even (tanh and sigmoid halves)")


@dataclass(frozen=True)
class TrainingHyper:
    """Optimization recipe of one network"""

    steps: int = 2000
    batch_size: int = 5
    learning_rate: float = 0.001
    lr_final_ratio: float = 0.1
    """Learning rate at the last step relative to the initial value"""
    grad_clip: float = 1.0
    seed: int = 1234
    log_interval: int = 100
    window_frames: int = 8
    """Vocoder only: training window length in mel frames"""

    def validate(self) -> None:
        """Raises :class:`.InvalidConfig` if the recipe is invalid"""
        if self.steps < 0:
            raise InvalidConfig("steps must be non-negative")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be at least 1")
        if self.learning_rate <= 0:
            raise InvalidConfig("learning_rate must be positive")
        if not 0.0 <= self.lr_final_ratio <= 1.0:
            raise InvalidConfig("lr_final_ratio must be in [0, 1]")
        if self.window_frames < 1:
            raise InvalidConfig("window_frames must be at least 1")


@dataclass(frozen=True)
class ConversionConfig:
    """End-to-end conversion settings"""

    griffin_lim_iters: int = 60
    griffin_lim_momentum: float = 0.0
    """0.0 gives the classic (monotone) Griffin-Lim iteration"""
    griffin_lim_seed: int = 0
    generation_mode: str = constants.GenerationMode.ARGMAX.value
    generation_seed: int = 0


@dataclass(frozen=True)
class AdaptationDefaults:
    """Fine-tuning step counts used when an adaptation plan does not set them"""

    synthesizer_steps: int = 10000
    taco_se_steps: int = 10000
    vocoder_steps: int = 20000
    vocoder_condition_on_enhanced: bool = False


def _default_hypers() -> Dict[str, TrainingHyper]:
    return {
        "recognizer": TrainingHyper(steps=2000, batch_size=5, learning_rate=0.002),
        "synthesizer": TrainingHyper(steps=5000, batch_size=5, learning_rate=0.002),
        "taco_se": TrainingHyper(steps=2000, batch_size=5, learning_rate=0.0005),
        "vocoder": TrainingHyper(steps=4000, batch_size=4, learning_rate=0.001),
    }


@dataclass(frozen=True)
class PipelineConfig:
    """Complete configuration of one pipeline"""

    features: FeatureConfig = field(default_factory=FeatureConfig)
    recognizer: PRConfig = field(default_factory=PRConfig)
    synthesizer: SynthesizerConfig = field(default_factory=SynthesizerConfig)
    vocoder: VocoderConfig = field(default_factory=VocoderConfig)
    hypers: Dict[str, TrainingHyper] = field(default_factory=_default_hypers)
    conversion: ConversionConfig = field(default_factory=ConversionConfig)
    adaptation: AdaptationDefaults = field(default_factory=AdaptationDefaults)
    checkpoint_dir: Optional[str] = None
    seed: int = 1234

    def hyper(self, kind: constants.ModelKind) -> TrainingHyper:
        """Returns the training recipe of a network"""
        try:
            return self.hypers[kind]
        except KeyError as e:
            raise InvalidConfig(f"No training recipe for {kind}") from e

    def validate(self) -> None:
        """Validates every section and their mutual consistency"""
        self.features.validate()
        self.recognizer.validate()
        self.synthesizer.validate()
        self.vocoder.validate()
        for hyper in self.hypers.values():
            hyper.validate()

        if self.recognizer.n_mels != self.features.n_mels:
            raise InvalidConfig("Recognizer input bands differ from feature bands")
        if self.synthesizer.ppg_dim != self.recognizer.n_classes:
            raise InvalidConfig("Synthesizer PPG input differs from recognizer output")
        if (
            self.synthesizer.n_mels != self.features.n_mels
            or self.synthesizer.n_linear != self.features.n_linear
        ):
            raise InvalidConfig("Synthesizer outputs differ from feature dimensions")
        if (
            self.vocoder.n_mels != self.features.n_mels
            or self.vocoder.hop_samples != self.features.hop_samples
        ):
            raise InvalidConfig("Vocoder conditioning differs from feature parameters")

    @classmethod
    def from_preset(
        cls, preset: constants.Preset = "desk", overrides: Optional[str] = None
    ) -> "PipelineConfig":
        """Loads a shipped preset and overlays an optional user YAML file

        :param preset: Name of a file in ``params/`` without the suffix
        :param overrides: Optional path to a YAML file overlaid on the preset
        :return: Validated pipeline configuration
        :raise InvalidConfig: If a file is missing or contains unknown keys
        """
        preset_path = os.path.join(PARAMS_DIR, f"{preset}.yaml")
        data = _load_yaml(preset_path)
        if overrides is not None:
            data = _merge(data, _load_yaml(overrides))
        config = from_dict(cls, data)
        config.validate()
        logger.debug(f"Loaded {preset} preset (overrides: {overrides})")
        return config

    def to_dict(self) -> Dict[str, Any]:
        """Returns a JSON serializable dictionary"""
        return asdict(self)


def _load_yaml(path: str) -> Dict[str, Any]:
    if not os.path.isfile(path):
        raise InvalidConfig(f"Could not find parameter file at {path}")
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise InvalidConfig(f"Parameter file {path} must contain a mapping")
    return data


def _merge(base: Dict[str, Any], overlay: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _coerce(value: Any, hint: Any) -> Any:
    origin = get_origin(hint)
    if is_dataclass(hint) and isinstance(value, dict):
        return from_dict(hint, value)
    if origin is tuple and isinstance(value, (list, tuple)):
        return tuple(value)
    if origin is dict and isinstance(value, dict):
        value_hint = get_args(hint)[1]
        return {k: _coerce(v, value_hint) for k, v in value.items()}
    if hint is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def from_dict(cls: Type[C], data: Dict[str, Any]) -> C:
    """Builds a (nested) configuration dataclass from a dictionary

    Missing keys keep their defaults. Dictionaries of training recipes are
    merged key by key onto the defaults.

    :raise InvalidConfig: If the dictionary contains unknown keys
    """
    known = {f.name for f in fields(cls)}  # type: ignore[arg-type]
    unknown = set(data) - set(known)
    if unknown:
        raise InvalidConfig(f"Unknown {cls.__name__} keys: {sorted(unknown)}")

    hints = get_type_hints(cls)
    kwargs: Dict[str, Any] = {}
    for name, value in data.items():
        hint = hints[name]
        if name == "hypers" and isinstance(value, dict):
            defaults = _default_hypers()
            for kind, hyper in value.items():
                base = asdict(defaults.get(kind, TrainingHyper()))
                defaults[kind] = from_dict(TrainingHyper, _merge(base, hyper or {}))
            kwargs[name] = defaults
        else:
            kwargs[name] = _coerce(value, hint)
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise InvalidConfig(f"Invalid {cls.__name__}: {e}") from e


def replace(config: C, **changes: Any) -> C:
    """Returns a copy of a frozen configuration with fields replaced"""
    return dataclasses.replace(config, **changes)  # type: ignore[type-var]
