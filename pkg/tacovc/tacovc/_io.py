"""File formats: TVCF tensor files, JSON sidecars, WAV audio and atomic writes

A TVCF file is ``b"TVCF"``, a little-endian u32 format version, a u32 dtype
tag, a u32 dimension count, one u32 per dimension and the row-major payload.
"""
import contextlib
import hashlib
import json
import logging
import os
import struct
import tempfile
from typing import IO, Any, Dict, Iterator, Tuple

import numpy as np
import soundfile as sf

from . import constants
from .errors import InvalidInput, IoError

logger = logging.getLogger(__name__)

_DTYPE_TAGS: Dict[int, np.dtype] = {
    1: np.dtype("<f4"),
    2: np.dtype("<i8"),
}
_TAGS_BY_KIND = {"f": 1, "i": 2, "u": 2, "b": 2}

_HEADER = struct.Struct("<4sIII")


@contextlib.contextmanager
def atomic_open(path: str, mode: str = "wb") -> Iterator[IO[Any]]:
    """Opens a temporary file next to ``path`` and renames it over ``path`` when
    the block exits without an exception

    Readers never observe a partially written file.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(
        prefix=f".{os.path.basename(path)}.", suffix=".tmp", dir=directory
    )
    try:
        with os.fdopen(fd, mode) as f:
            yield f
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_path, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.remove(tmp_path)
        raise


def encode_tensor(array: np.ndarray) -> bytes:
    """Serializes an array into TVCF bytes

    Floating point arrays are stored as float32, integer and boolean arrays as
    int64.
    """
    array = np.asarray(array)
    try:
        tag = _TAGS_BY_KIND[array.dtype.kind]
    except KeyError as e:
        raise InvalidInput(f"Cannot store arrays of dtype {array.dtype}") from e
    payload = np.ascontiguousarray(array, dtype=_DTYPE_TAGS[tag])
    header = _HEADER.pack(
        constants.TVCF_MAGIC, constants.TVCF_VERSION, tag, payload.ndim
    )
    dims = struct.pack(f"<{payload.ndim}I", *payload.shape)
    return header + dims + payload.tobytes(order="C")


def decode_tensor(data: bytes) -> np.ndarray:
    """Parses TVCF bytes into an array

    :raise IoError: If the bytes are not a well formed TVCF blob
    """
    if len(data) < _HEADER.size:
        raise IoError("Truncated tensor header")
    magic, version, tag, ndim = _HEADER.unpack_from(data)
    if magic != constants.TVCF_MAGIC:
        raise IoError(f"Bad tensor magic {magic!r}")
    if version != constants.TVCF_VERSION:
        raise IoError(f"Unsupported tensor format version {version}")
    if tag not in _DTYPE_TAGS:
        raise IoError(f"Unknown tensor dtype tag {tag}")

    offset = _HEADER.size
    dims_size = 4 * ndim
    if len(data) < offset + dims_size:
        raise IoError("Truncated tensor dimensions")
    shape = struct.unpack_from(f"<{ndim}I", data, offset)
    offset += dims_size

    dtype = _DTYPE_TAGS[tag]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(data) - offset != expected:
        raise IoError(
            f"Tensor payload has {len(data) - offset} bytes, expected {expected}"
        )
    return np.frombuffer(data, dtype=dtype, offset=offset).reshape(shape).copy()


def write_tensor(path: str, array: np.ndarray) -> None:
    """Writes an array to a TVCF file atomically"""
    with atomic_open(path) as f:
        f.write(encode_tensor(array))


def read_tensor(path: str) -> np.ndarray:
    """Reads a TVCF file

    :raise IoError: If the file cannot be read or is malformed
    """
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise IoError(f"Could not read tensor file {path}: {e}") from e
    try:
        return decode_tensor(data)
    except IoError as e:
        raise IoError(f"{path}: {e}") from e


def sidecar_path(path: str) -> str:
    """Returns the JSON sidecar path of a feature file"""
    return path + constants.SIDECAR_SUFFIX


def write_sidecar(path: str, metadata: Dict[str, Any]) -> None:
    """Writes the JSON sidecar of a feature file atomically"""
    with atomic_open(sidecar_path(path), "w") as f:
        json.dump(metadata, f, sort_keys=True, indent=2)


def read_sidecar(path: str) -> Dict[str, Any]:
    """Reads the JSON sidecar of a feature file

    :raise IoError: If the sidecar is missing or not valid JSON
    """
    try:
        with open(sidecar_path(path), "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise IoError(f"Could not read sidecar of {path}: {e}") from e


def read_wav(path: str) -> Tuple[np.ndarray, int]:
    """Reads a mono WAV file

    :return: Tuple of float32 samples in [-1, 1] and the sample rate
    :raise IoError: If the file cannot be decoded
    :raise InvalidInput: If the file has more than one channel
    """
    try:
        samples, sample_rate = sf.read(path, dtype="float32", always_2d=True)
    except (RuntimeError, OSError) as e:
        raise IoError(f"Could not read audio file {path}: {e}") from e
    if samples.shape[1] != 1:
        raise InvalidInput(
            f"{path} has {samples.shape[1]} channels, only mono audio is supported"
        )
    return np.clip(samples[:, 0], -1.0, 1.0), int(sample_rate)


def write_wav(path: str, samples: np.ndarray, sample_rate: int) -> None:
    """Writes 16-bit PCM mono WAV atomically"""
    samples = np.clip(np.asarray(samples, dtype=np.float32), -1.0, 1.0)
    with atomic_open(path) as f:
        sf.write(f, samples, sample_rate, subtype="PCM_16", format="WAV")


def file_sha256(path: str) -> str:
    """Returns the hex sha256 digest of a file"""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def append_jsonl(path: str, record: Dict[str, Any]) -> None:
    """Appends one JSON record as a line"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path: str) -> list:
    """Reads all records of a JSON lines file

    :raise IoError: If the file cannot be read or a line is not valid JSON
    """
    records = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as e:
                    raise IoError(f"{path}:{line_no}: invalid JSON: {e}") from e
    except OSError as e:
        raise IoError(f"Could not read {path}: {e}") from e
    return records
