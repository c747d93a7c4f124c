"""Tests the TVCF tensor format, sidecars and WAV helpers"""
import os
import tempfile
import unittest

import numpy as np

from tacovc import _io
from tacovc.errors import InvalidInput, IoError


class TestTensorFormat(unittest.TestCase):
    """Tests :func:`.encode_tensor` and :func:`.decode_tensor`"""

    def test_header_layout(self):
        data = _io.encode_tensor(np.zeros((2, 3), dtype=np.float32))
        self.assertEqual(data[:4], b"TVCF")
        self.assertEqual(int.from_bytes(data[4:8], "little"), 1)
        self.assertEqual(int.from_bytes(data[12:16], "little"), 2)
        self.assertEqual(len(data), 16 + 2 * 4 + 6 * 4)

    def test_float64_stored_as_float32(self):
        array = np.linspace(0.0, 1.0, 12).reshape(3, 4)
        decoded = _io.decode_tensor(_io.encode_tensor(array))
        self.assertEqual(decoded.dtype, np.float32)
        np.testing.assert_allclose(decoded, array, rtol=1e-6)

    def test_bad_magic(self):
        data = bytearray(_io.encode_tensor(np.zeros(3)))
        data[:4] = b"XXXX"
        with self.assertRaises(IoError):
            _io.decode_tensor(bytes(data))

    def test_truncated_payload(self):
        data = _io.encode_tensor(np.zeros(10))
        with self.assertRaises(IoError):
            _io.decode_tensor(data[:-4])

    def test_unsupported_dtype(self):
        with self.assertRaises(InvalidInput):
            _io.encode_tensor(np.array(["a"]))


class TestFiles(unittest.TestCase):
    """Tests the file helpers"""

    def test_atomic_open_leaves_no_file_on_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "x.bin")
            with self.assertRaises(RuntimeError):
                with _io.atomic_open(path) as f:
                    f.write(b"partial")
                    raise RuntimeError("boom")
            self.assertEqual(os.listdir(tmp), [])

    def test_wav_is_16_bit_mono(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "a.wav")
            samples = np.linspace(-0.5, 0.5, 1000)
            _io.write_wav(path, samples, 22050)
            read, rate = _io.read_wav(path)
        self.assertEqual(rate, 22050)
        self.assertEqual(read.shape, (1000,))
        np.testing.assert_allclose(read, samples, atol=1.0 / 32768 * 2)

    def test_unreadable_wav(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "a.wav")
            with open(path, "wb") as f:
                f.write(b"not audio")
            with self.assertRaises(IoError):
                _io.read_wav(path)

    def test_jsonl_append(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "log.jsonl")
            _io.append_jsonl(path, {"a": 1})
            _io.append_jsonl(path, {"a": 2})
            self.assertEqual(_io.read_jsonl(path), [{"a": 1}, {"a": 2}])

    def test_missing_sidecar(self):
        with self.assertRaises(IoError):
            _io.read_sidecar("/nonexistent/x.mel")
