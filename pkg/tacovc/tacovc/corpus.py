"""Dataset manifests, the phone inventory and the on-disk feature store

Manifests are JSON lines files with one utterance per line:

.. code-block:: json

    {"utt_id": "spk1_0001", "audio": "wav/spk1_0001.wav", "speaker": "spk1",
     "transcript": "h# dh ax k ae t h#"}

Relative audio paths are resolved against the directory of the manifest.
Features of an utterance live next to each other in a feature directory as
``<utt_id>.mel``, ``<utt_id>.lin`` and ``<utt_id>.smspec`` TVCF files, each
with a JSON sidecar.
"""
import json
import logging
import os
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import _io, constants
from .core import _shared
from .config import FeatureConfig
from .core.audio_features import (
    LinearSpectrogram,
    MelSpectrogram,
    Waveform,
    resample,
    waveform_to_features,
)
from .errors import (
    ConfigMismatch,
    InvalidInput,
    IoError,
    MissingFeature,
    ProvenanceMismatch,
    TacoVCError,
)

logger = logging.getLogger(__name__)

PHONE_TABLE = os.path.join(os.path.dirname(__file__), "data", "timit_phones.tsv")
"""Path of the shipped phone inventory and folding table"""

_DROPPED = "-"


class PhoneInventory:
    """Training phone inventory with its folding to the scoring inventory

    Phone ids are the row order of the table. The CTC blank is not part of the
    inventory, it takes the id right after the last phone.
    """

    def __init__(self, symbols: Sequence[str], folding: Dict[str, Optional[str]]):
        if len(set(symbols)) != len(symbols):
            raise InvalidInput("Phone inventory contains duplicate symbols")
        self._symbols: Tuple[str, ...] = tuple(symbols)
        self._ids = {s: i for i, s in enumerate(self._symbols)}
        self._folding = dict(folding)

    @classmethod
    def from_tsv(cls, path: str = PHONE_TABLE) -> "PhoneInventory":
        """Loads an ``id, phone, folded`` table, ``-`` marking dropped phones

        :raise IoError: If the table cannot be read or is malformed
        """
        symbols: List[str] = []
        folding: Dict[str, Optional[str]] = {}
        try:
            with open(path, "r", encoding="utf-8") as f:
                for line in f:
                    if not line.strip() or line.startswith("#"):
                        continue
                    phone_id, phone, folded = line.rstrip("\n").split("\t")
                    if int(phone_id) != len(symbols):
                        raise IoError(f"Phone ids in {path} are not consecutive")
                    symbols.append(phone)
                    folding[phone] = None if folded == _DROPPED else folded
        except (OSError, ValueError) as e:
            raise IoError(f"Could not read phone table {path}: {e}") from e
        return cls(symbols, folding)

    def __len__(self) -> int:
        return len(self._symbols)

    @property
    def symbols(self) -> Tuple[str, ...]:
        """Training phone symbols in id order"""
        return self._symbols

    @property
    def blank_id(self) -> int:
        """CTC blank class id"""
        return len(self._symbols)

    @property
    def folded_symbols(self) -> Tuple[str, ...]:
        """Sorted scoring inventory"""
        return tuple(sorted({f for f in self._folding.values() if f is not None}))

    def encode(self, transcript: str) -> List[int]:
        """Maps a whitespace separated transcript to phone ids

        :raise InvalidInput: If a symbol is not in the inventory
        """
        try:
            return [self._ids[symbol] for symbol in transcript.split()]
        except KeyError as e:
            raise InvalidInput(f"Unknown phone symbol {e.args[0]!r}") from e

    def decode(self, labels: Sequence[int]) -> List[str]:
        """Maps phone ids to symbols"""
        return [self._symbols[label] for label in labels]

    def fold(self, labels: Sequence[int]) -> List[str]:
        """Maps phone ids to scoring symbols, dropping phones without a fold"""
        folded = (self._folding[self._symbols[label]] for label in labels)
        return [f for f in folded if f is not None]


@lru_cache(maxsize=1)
def default_inventory() -> PhoneInventory:
    """Returns the shipped 61-phone inventory"""
    return PhoneInventory.from_tsv(PHONE_TABLE)


@dataclass(frozen=True)
class UtteranceRecord:
    """One manifest line"""

    utt_id: str
    audio: str
    speaker: str
    transcript: Optional[str] = None

    def to_dict(self, relative_to: Optional[str] = None) -> Dict[str, Any]:
        """Returns the JSON lines representation"""
        audio = self.audio
        if relative_to is not None:
            audio = os.path.relpath(audio, relative_to)
        record: Dict[str, Any] = {
            "utt_id": self.utt_id,
            "audio": audio,
            "speaker": self.speaker,
        }
        if self.transcript is not None:
            record["transcript"] = self.transcript
        return record


class DatasetManifest:
    """Ordered collection of utterance records with unique ids"""

    def __init__(self, records: Sequence[UtteranceRecord]):
        ids = [r.utt_id for r in records]
        duplicates = sorted({i for i in ids if ids.count(i) > 1})
        if duplicates:
            raise InvalidInput(f"Duplicate utterance ids in manifest: {duplicates}")
        self._records = tuple(records)
        self._by_id = {r.utt_id: r for r in self._records}

    @classmethod
    def from_jsonl(cls, path: str) -> "DatasetManifest":
        """Reads a manifest, resolving relative audio paths

        :raise IoError: If the file cannot be read
        :raise InvalidInput: If a record is missing a required field
        """
        base = os.path.dirname(os.path.abspath(path))
        records = []
        for i, raw in enumerate(_io.read_jsonl(path), start=1):
            try:
                audio = raw["audio"]
                records.append(
                    UtteranceRecord(
                        utt_id=str(raw["utt_id"]),
                        audio=audio if os.path.isabs(audio) else os.path.join(base, audio),
                        speaker=str(raw["speaker"]),
                        transcript=raw.get("transcript"),
                    )
                )
            except KeyError as e:
                raise InvalidInput(f"{path}:{i}: missing field {e.args[0]!r}") from e
        manifest = cls(records)
        logger.debug(f"Read {len(manifest)} utterances from {path}")
        return manifest

    def to_jsonl(self, path: str) -> None:
        """Writes the manifest with audio paths relative to its directory"""
        base = os.path.dirname(os.path.abspath(path))
        with _io.atomic_open(path, "w") as f:
            for record in self._records:
                f.write(json.dumps(record.to_dict(relative_to=base)) + "\n")

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[UtteranceRecord]:
        return iter(self._records)

    def __getitem__(self, utt_id: str) -> UtteranceRecord:
        try:
            return self._by_id[utt_id]
        except KeyError as e:
            raise InvalidInput(f"Unknown utterance id {utt_id}") from e

    @property
    def utt_ids(self) -> List[str]:
        """Utterance ids in manifest order"""
        return [r.utt_id for r in self._records]

    @property
    def speakers(self) -> List[str]:
        """Distinct speakers in order of first appearance"""
        return list(dict.fromkeys(r.speaker for r in self._records))

    def require_non_empty(self) -> None:
        """:raise InvalidInput: If the manifest has no records"""
        if not self._records:
            raise InvalidInput("Manifest is empty")

    def require_transcripts(self) -> None:
        """:raise InvalidInput: If any record lacks a transcript"""
        missing = [r.utt_id for r in self._records if not r.transcript]
        if missing:
            raise InvalidInput(
                f"{len(missing)} utterances have no transcript, e.g. {missing[0]}"
            )

    def filter_speaker(self, speaker: str) -> "DatasetManifest":
        """Returns the records of one speaker"""
        return DatasetManifest([r for r in self._records if r.speaker == speaker])


def load_waveform(path: str, features: FeatureConfig) -> Waveform:
    """Reads a WAV file and resamples it to the feature rate

    :raise IoError: If the file cannot be decoded
    """
    samples, sample_rate = _io.read_wav(path)
    w = Waveform(samples, sample_rate)
    if sample_rate != features.sample_rate:
        logger.info(
            f"Resampling {os.path.basename(path)} from {sample_rate} Hz to "
            f"{features.sample_rate} Hz"
        )
        w = resample(w, features.sample_rate, features)
    return w


@dataclass(frozen=True)
class StageReport:
    """Per-utterance outcome of a corpus-wide operation"""

    succeeded: Tuple[str, ...]
    failed: Tuple[Tuple[str, str], ...]
    """Pairs of utterance id and error code"""

    @property
    def ok(self) -> bool:
        """True if no utterance failed"""
        return not self.failed

    def to_dict(self) -> Dict[str, Any]:
        """Returns a JSON serializable summary"""
        return {
            "succeeded": len(self.succeeded),
            "failed": [{"utt_id": u, "error": e} for u, e in self.failed],
        }


class FeatureStore:
    """Feature files of a corpus in one directory

    Every file carries a sidecar with the extraction parameters and their
    hash, the role of the features and their provenance. Reads refuse files
    extracted with other parameters.
    """

    def __init__(self, root: str, features: FeatureConfig):
        self.root = root
        self.features = features
        self._feature_hash = features.hash()

    def path(self, utt_id: str, suffix: str) -> str:
        """Returns the path of a feature file"""
        return os.path.join(self.root, utt_id + suffix)

    def has(self, utt_id: str, suffix: str) -> bool:
        """True if both the feature file and its sidecar exist"""
        path = self.path(utt_id, suffix)
        return os.path.isfile(path) and os.path.isfile(_io.sidecar_path(path))

    def _write(
        self,
        utt_id: str,
        suffix: str,
        values: np.ndarray,
        role: str,
        provenance: str,
    ) -> None:
        path = self.path(utt_id, suffix)
        _io.write_tensor(path, values)
        _io.write_sidecar(
            path,
            {
                "utt_id": utt_id,
                "role": role,
                "provenance": provenance,
                "n_frames": int(values.shape[0]),
                "feature_hash": self._feature_hash,
                "features": asdict(self.features),
            },
        )

    def _read(self, utt_id: str, suffix: str) -> Tuple[np.ndarray, Dict[str, Any]]:
        path = self.path(utt_id, suffix)
        if not self.has(utt_id, suffix):
            raise MissingFeature(f"No {suffix} features for {utt_id} in {self.root}")
        metadata = _io.read_sidecar(path)
        if metadata.get("feature_hash") != self._feature_hash:
            raise ConfigMismatch(
                f"{path} was extracted with feature hash "
                f"{metadata.get('feature_hash')}, expected {self._feature_hash}"
            )
        values = _io.read_tensor(path)
        if values.shape[0] != metadata.get("n_frames"):
            raise IoError(f"{path} frame count disagrees with its sidecar")
        return values, metadata

    def write_true(
        self, utt_id: str, mel: MelSpectrogram, linear: LinearSpectrogram
    ) -> None:
        """Stores the mel and linear spectrograms extracted from audio"""
        self._write(
            utt_id,
            constants.MEL_SUFFIX,
            mel.values,
            constants.Role.TRUE_Y.value,
            constants.PROVENANCE_AUDIO,
        )
        self._write(
            utt_id,
            constants.LINEAR_SUFFIX,
            linear.values,
            constants.Role.TRUE_Y.value,
            constants.PROVENANCE_AUDIO,
        )

    def read_mel(self, utt_id: str) -> MelSpectrogram:
        """:raise MissingFeature: If the features have not been extracted"""
        values, _ = self._read(utt_id, constants.MEL_SUFFIX)
        return MelSpectrogram(
            values, role=constants.Role.TRUE_Y, hop_samples=self.features.hop_samples
        )

    def read_linear(self, utt_id: str) -> LinearSpectrogram:
        """:raise MissingFeature: If the features have not been extracted"""
        values, _ = self._read(utt_id, constants.LINEAR_SUFFIX)
        return LinearSpectrogram(values)

    def write_smspec(self, utt_id: str, mel: MelSpectrogram, provenance: str) -> None:
        """Stores a synthesized mel spectrogram tagged with the id of the
        synthesizer checkpoint that produced it
        """
        self._write(
            utt_id,
            constants.SMSPEC_SUFFIX,
            mel.values,
            constants.Role.SYNTH_YHAT.value,
            provenance,
        )

    def smspec_provenance(self, utt_id: str) -> str:
        """Returns the checkpoint id recorded for a synthesized mel spectrogram"""
        _, metadata = self._read(utt_id, constants.SMSPEC_SUFFIX)
        return metadata["provenance"]

    def read_smspec(
        self, utt_id: str, provenance: Optional[str] = None
    ) -> MelSpectrogram:
        """Reads a synthesized mel spectrogram

        :param provenance: Required producing checkpoint id, or None to accept any
        :raise MissingFeature: If the file has not been generated
        :raise ProvenanceMismatch: If another checkpoint produced the file
        """
        values, metadata = self._read(utt_id, constants.SMSPEC_SUFFIX)
        if provenance is not None and metadata.get("provenance") != provenance:
            raise ProvenanceMismatch(
                f"{utt_id} was synthesized by checkpoint {metadata.get('provenance')}, "
                f"expected {provenance}. Regenerate the synthesized corpus."
            )
        return MelSpectrogram(
            values,
            role=constants.Role.SYNTH_YHAT,
            hop_samples=self.features.hop_samples,
        )

    def ingest(self, manifest: DatasetManifest, overwrite: bool = False) -> StageReport:
        """Extracts mel and linear spectrograms for every manifest utterance

        Audio at other sample rates is resampled first. Failing utterances are
        logged and reported, not raised.
        """
        succeeded: List[str] = []
        failed: List[Tuple[str, str]] = []
        for record in _shared.progress(manifest, "features"):
            if not overwrite and self.has(record.utt_id, constants.MEL_SUFFIX) and (
                self.has(record.utt_id, constants.LINEAR_SUFFIX)
            ):
                succeeded.append(record.utt_id)
                continue
            try:
                w = load_waveform(record.audio, self.features)
                mel, linear = waveform_to_features(w, self.features)
                self.write_true(record.utt_id, mel, linear)
                succeeded.append(record.utt_id)
            except TacoVCError as e:
                logger.warning(f"Skipping {record.utt_id}: {e.code}: {e}")
                failed.append((record.utt_id, e.code))
        logger.info(
            f"Extracted features for {len(succeeded)}/{len(manifest)} utterances "
            f"into {self.root}"
        )
        return StageReport(tuple(succeeded), tuple(failed))
