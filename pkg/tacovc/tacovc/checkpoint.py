"""Versioned checkpoint container shared by the four networks

A checkpoint is one ``.tvck`` file: ``b"TVCK"``, a little-endian u32 format
version, a u32 header length, a UTF-8 JSON header and the concatenated TVCF
blobs of the named weight tensors. The header holds the network kind, its
configuration, the feature parameters and their hash, the training step and an
index of tensor offsets.

The checkpoint id is the truncated sha256 of the file bytes, so identical
weights and metadata always produce the identical id.
"""
import hashlib
import json
import logging
import os
import struct
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn

from . import _io, constants
from ._decorators import cache_if
from .config import FeatureConfig
from .errors import ConfigMismatch, IoError, MissingCheckpoint

logger = logging.getLogger(__name__)

_PREFIX = struct.Struct("<4sII")


@dataclass(frozen=True)
class ModelCheckpoint:
    """Weights and configuration of one trained network"""

    kind: constants.ModelKind
    config: Dict[str, Any]
    features: Dict[str, Any]
    feature_hash: str
    step: int
    tensors: Dict[str, np.ndarray]
    extra: Dict[str, Any] = field(default_factory=dict)
    checkpoint_id: Optional[str] = None
    """Id of the file this checkpoint was read from or written to"""

    @classmethod
    def from_module(
        cls,
        kind: constants.ModelKind,
        module: nn.Module,
        config: Any,
        features: FeatureConfig,
        step: int,
        extra: Optional[Dict[str, Any]] = None,
    ) -> "ModelCheckpoint":
        """Snapshots the state dict of a module"""
        tensors = {
            name: tensor.detach().cpu().numpy().copy()
            for name, tensor in module.state_dict().items()
        }
        return cls(
            kind=kind,
            config=asdict(config),
            features=asdict(features),
            feature_hash=features.hash(),
            step=step,
            tensors=tensors,
            extra=dict(extra or {}),
        )

    def load_into(self, module: nn.Module) -> nn.Module:
        """Copies the stored tensors into a module built from :attr:`config`

        :raise ConfigMismatch: If the stored tensors do not fit the module
        """
        state = {name: torch.from_numpy(array) for name, array in self.tensors.items()}
        try:
            module.load_state_dict(state, strict=True)
        except RuntimeError as e:
            raise ConfigMismatch(f"{self.kind} weights do not fit the model: {e}") from e
        return module

    def require_features(self, features: FeatureConfig) -> None:
        """:raise ConfigMismatch: If extracted with other feature parameters"""
        if self.feature_hash != features.hash():
            raise ConfigMismatch(
                f"{self.kind} checkpoint uses feature hash {self.feature_hash}, "
                f"pipeline uses {features.hash()}"
            )

    def feature_config(self) -> FeatureConfig:
        """Returns the feature parameters the network was trained on"""
        values = dict(self.features)
        return FeatureConfig(**values)


def encode_checkpoint(ckpt: ModelCheckpoint) -> bytes:
    """Serializes a checkpoint into container bytes"""
    blobs = []
    index = []
    offset = 0
    for name in sorted(ckpt.tensors):
        blob = _io.encode_tensor(ckpt.tensors[name])
        index.append({"name": name, "offset": offset, "length": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "kind": ckpt.kind,
        "config": ckpt.config,
        "features": ckpt.features,
        "feature_hash": ckpt.feature_hash,
        "step": ckpt.step,
        "extra": ckpt.extra,
        "tensors": index,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    prefix = _PREFIX.pack(constants.TVCK_MAGIC, constants.TVCK_VERSION, len(header_bytes))
    return prefix + header_bytes + b"".join(blobs)


def decode_checkpoint(data: bytes) -> ModelCheckpoint:
    """Parses container bytes

    :raise IoError: If the bytes are not a well formed checkpoint
    """
    if len(data) < _PREFIX.size:
        raise IoError("Truncated checkpoint")
    magic, version, header_length = _PREFIX.unpack_from(data)
    if magic != constants.TVCK_MAGIC:
        raise IoError(f"Bad checkpoint magic {magic!r}")
    if version != constants.TVCK_VERSION:
        raise IoError(f"Unsupported checkpoint format version {version}")
    body_start = _PREFIX.size + header_length
    try:
        header = json.loads(data[_PREFIX.size : body_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise IoError(f"Malformed checkpoint header: {e}") from e

    tensors = {}
    for entry in header["tensors"]:
        start = body_start + entry["offset"]
        tensors[entry["name"]] = _io.decode_tensor(data[start : start + entry["length"]])
    return ModelCheckpoint(
        kind=header["kind"],
        config=header["config"],
        features=header["features"],
        feature_hash=header["feature_hash"],
        step=header["step"],
        tensors=tensors,
        extra=header.get("extra", {}),
        checkpoint_id=checkpoint_digest(data),
    )


def checkpoint_digest(data: bytes) -> str:
    """Returns the checkpoint id of container bytes"""
    return hashlib.sha256(data).hexdigest()[: constants.CHECKPOINT_ID_LENGTH]


def save_checkpoint(ckpt: ModelCheckpoint, path: str) -> str:
    """Writes a checkpoint atomically

    :return: The checkpoint id
    """
    data = encode_checkpoint(ckpt)
    with _io.atomic_open(path) as f:
        f.write(data)
    checkpoint_id = checkpoint_digest(data)
    logger.info(f"Saved {ckpt.kind} checkpoint {checkpoint_id} (step {ckpt.step}) to {path}")
    return checkpoint_id


def load_checkpoint(
    path: str, kind: Optional[constants.ModelKind] = None
) -> ModelCheckpoint:
    """Reads a checkpoint

    :param kind: Expected network kind, or None to accept any
    :raise MissingCheckpoint: If the file does not exist
    :raise IoError: If the file is malformed
    :raise ConfigMismatch: If the file holds another kind of network
    """
    if not os.path.isfile(path):
        raise MissingCheckpoint(f"No checkpoint at {path}")
    with open(path, "rb") as f:
        data = f.read()
    try:
        ckpt = decode_checkpoint(data)
    except (IoError, KeyError) as e:
        raise IoError(f"{path}: {e}") from e
    if kind is not None and ckpt.kind != kind:
        raise ConfigMismatch(f"{path} holds a {ckpt.kind} network, expected {kind}")
    return ckpt


class CheckpointSet:
    """Directory holding one checkpoint per network kind

    Parsed checkpoints are cached until their file changes on disk.
    """

    def __init__(self, root: str):
        self.root = root
        self._stamps: Dict[str, Tuple[int, int]] = {}

    def path(self, kind: constants.ModelKind) -> str:
        """Returns the checkpoint path of a network kind"""
        return os.path.join(self.root, kind + constants.CHECKPOINT_SUFFIX)

    def exists(self, kind: constants.ModelKind) -> bool:
        """True if the checkpoint file exists"""
        return os.path.isfile(self.path(kind))

    def require(self, kinds: Iterable[constants.ModelKind]) -> None:
        """:raise MissingCheckpoint: If any of the checkpoints is missing"""
        missing = [k for k in kinds if not self.exists(k)]
        if missing:
            raise MissingCheckpoint(
                f"Missing checkpoints in {self.root}: {', '.join(missing)}"
            )

    def checkpoint_id(self, kind: constants.ModelKind) -> str:
        """Returns the id of a stored checkpoint without parsing it"""
        if not self.exists(kind):
            raise MissingCheckpoint(f"No {kind} checkpoint in {self.root}")
        with open(self.path(kind), "rb") as f:
            return checkpoint_digest(f.read())

    def save(self, ckpt: ModelCheckpoint) -> str:
        """Writes a checkpoint into the set

        :return: The checkpoint id
        """
        return save_checkpoint(ckpt, self.path(ckpt.kind))

    def _stamp(self, kind: str) -> Tuple[int, int]:
        stat = os.stat(self.path(kind))
        return stat.st_mtime_ns, stat.st_size

    def _changed(self, kind: str) -> bool:
        return not self.exists(kind) or self._stamps.get(kind) != self._stamp(kind)

    def _load_stamped(self, kind: constants.ModelKind) -> ModelCheckpoint:
        ckpt = load_checkpoint(self.path(kind), kind)
        self._stamps[kind] = self._stamp(kind)
        return ckpt

    def _recognizer_changed(self) -> bool:
        return self._changed("recognizer")

    def _synthesizer_changed(self) -> bool:
        return self._changed("synthesizer")

    def _taco_se_changed(self) -> bool:
        return self._changed("taco_se")

    def _vocoder_changed(self) -> bool:
        return self._changed("vocoder")

    @property
    @cache_if(_recognizer_changed)
    def recognizer(self) -> ModelCheckpoint:
        """Phoneme recognizer checkpoint"""
        return self._load_stamped("recognizer")

    @property
    @cache_if(_synthesizer_changed)
    def synthesizer(self) -> ModelCheckpoint:
        """Synthesizer checkpoint"""
        return self._load_stamped("synthesizer")

    @property
    @cache_if(_taco_se_changed)
    def taco_se(self) -> ModelCheckpoint:
        """Enhancement network checkpoint"""
        return self._load_stamped("taco_se")

    @property
    @cache_if(_vocoder_changed)
    def vocoder(self) -> ModelCheckpoint:
        """Vocoder checkpoint"""
        return self._load_stamped("vocoder")

    def load(self, kind: constants.ModelKind) -> ModelCheckpoint:
        """Returns the (cached) checkpoint of a network kind"""
        return getattr(self, kind)

    def require_same_features(
        self, kinds: Iterable[constants.ModelKind], features: Optional[FeatureConfig] = None
    ) -> str:
        """Checks that the checkpoints share one feature hash

        :param features: Pipeline feature parameters the hash must also match
        :return: The shared feature hash
        :raise MissingCheckpoint: If a checkpoint is missing
        :raise ConfigMismatch: If the hashes differ
        """
        kinds = list(kinds)
        self.require(kinds)
        hashes = {kind: self.load(kind).feature_hash for kind in kinds}
        distinct = set(hashes.values())
        if features is not None:
            distinct.add(features.hash())
        if len(distinct) != 1:
            raise ConfigMismatch(f"Checkpoints use mixed feature parameters: {hashes}")
        return distinct.pop()

    def ids(self) -> Dict[str, Optional[str]]:
        """Returns the id of every present checkpoint, None for missing ones"""
        return {
            kind: self.checkpoint_id(kind) if self.exists(kind) else None
            for kind in constants.MODEL_KINDS
        }
