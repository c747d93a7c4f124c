"""Tests manifests, the phone inventory and the feature store"""
import json
import os
import tempfile
import unittest

import numpy as np

from tacovc import _io, constants
from tacovc.config import FeatureConfig
from tacovc.core.audio_features import LinearSpectrogram, MelSpectrogram
from tacovc.corpus import (
    DatasetManifest,
    FeatureStore,
    UtteranceRecord,
    default_inventory,
    load_waveform,
)
from tacovc.errors import (
    ConfigMismatch,
    InvalidInput,
    MissingFeature,
    ProvenanceMismatch,
)
from tacovc.extensions.toy_corpus import sine_wave


class TestPhoneInventory(unittest.TestCase):
    """Tests the shipped inventory"""

    def test_sizes(self):
        inventory = default_inventory()
        self.assertEqual(len(inventory), 61)
        self.assertEqual(inventory.blank_id, 61)
        self.assertEqual(len(inventory.folded_symbols), 39)

    def test_encode_decode(self):
        inventory = default_inventory()
        labels = inventory.encode("h# aa s h#")
        self.assertEqual(inventory.decode(labels), ["h#", "aa", "s", "h#"])

    def test_unknown_symbol(self):
        with self.assertRaises(InvalidInput):
            default_inventory().encode("h# xyz h#")

    def test_fold_drops_glottal_stop(self):
        inventory = default_inventory()
        self.assertEqual(inventory.fold(inventory.encode("q aa")), ["aa"])


class TestManifest(unittest.TestCase):
    """Tests :class:`.DatasetManifest`"""

    def test_relative_paths_resolve(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "manifest.jsonl")
            with open(path, "w") as f:
                f.write(json.dumps({"utt_id": "u1", "audio": "wav/u1.wav", "speaker": "A"}))
                f.write("\n")
            manifest = DatasetManifest.from_jsonl(path)
        self.assertEqual(manifest["u1"].audio, os.path.join(tmp, "wav", "u1.wav"))
        self.assertIsNone(manifest["u1"].transcript)
        self.assertEqual(manifest.speakers, ["A"])

    def test_round_trip_keeps_records(self):
        with tempfile.TemporaryDirectory() as tmp:
            records = [
                UtteranceRecord("u1", os.path.join(tmp, "u1.wav"), "A", "h# aa h#"),
                UtteranceRecord("u2", os.path.join(tmp, "u2.wav"), "B"),
            ]
            path = os.path.join(tmp, "manifest.jsonl")
            DatasetManifest(records).to_jsonl(path)
            self.assertEqual(list(DatasetManifest.from_jsonl(path)), records)
            self.assertEqual(_io.read_jsonl(path)[0]["audio"], "u1.wav")

    def test_duplicate_ids(self):
        record = UtteranceRecord("u1", "a.wav", "A")
        with self.assertRaises(InvalidInput):
            DatasetManifest([record, record])

    def test_missing_field(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "manifest.jsonl")
            with open(path, "w") as f:
                f.write(json.dumps({"utt_id": "u1", "speaker": "A"}) + "\n")
            with self.assertRaises(InvalidInput):
                DatasetManifest.from_jsonl(path)

    def test_requirements(self):
        with self.assertRaises(InvalidInput):
            DatasetManifest([]).require_non_empty()
        with self.assertRaises(InvalidInput):
            DatasetManifest([UtteranceRecord("u1", "a.wav", "A")]).require_transcripts()

    def test_filter_speaker(self):
        manifest = DatasetManifest(
            [UtteranceRecord("a", "a.wav", "A"), UtteranceRecord("b", "b.wav", "B")]
        )
        self.assertEqual(manifest.filter_speaker("B").utt_ids, ["b"])


class TestFeatureStore(unittest.TestCase):
    """Tests :class:`.FeatureStore`"""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.root = self._tmp.name
        self.store = FeatureStore(self.root, FeatureConfig())
        rng = np.random.default_rng(0)
        self.mel = MelSpectrogram(rng.uniform(size=(12, 80)))
        self.linear = LinearSpectrogram(rng.uniform(size=(12, 513)))

    def tearDown(self):
        self._tmp.cleanup()

    def test_true_features(self):
        self.store.write_true("u1", self.mel, self.linear)
        mel = self.store.read_mel("u1")
        self.assertEqual(mel.role, constants.Role.TRUE_Y)
        np.testing.assert_array_equal(mel.values, self.mel.values)
        sidecar = _io.read_sidecar(self.store.path("u1", constants.MEL_SUFFIX))
        self.assertEqual(sidecar["provenance"], constants.PROVENANCE_AUDIO)
        self.assertEqual(sidecar["n_frames"], 12)
        self.assertEqual(self.store.read_linear("u1").n_bands, 513)

    def test_missing(self):
        with self.assertRaises(MissingFeature):
            self.store.read_mel("nope")
        with self.assertRaises(MissingFeature):
            self.store.read_smspec("nope")

    def test_smspec_provenance(self):
        self.store.write_smspec("u1", self.mel, "abc")
        self.assertEqual(self.store.smspec_provenance("u1"), "abc")
        self.assertEqual(self.store.read_smspec("u1", "abc").role, constants.Role.SYNTH_YHAT)
        self.store.read_smspec("u1")
        with self.assertRaises(ProvenanceMismatch):
            self.store.read_smspec("u1", "def")

    def test_other_feature_parameters(self):
        self.store.write_true("u1", self.mel, self.linear)
        other = FeatureStore(self.root, FeatureConfig(fmin=100.0))
        with self.assertRaises(ConfigMismatch):
            other.read_mel("u1")

    def test_ingest_reports_failures(self):
        good = os.path.join(self.root, "good.wav")
        _io.write_wav(good, sine_wave(440.0, 0.2), 22050)
        manifest = DatasetManifest(
            [
                UtteranceRecord("good", good, "A"),
                UtteranceRecord("bad", os.path.join(self.root, "missing.wav"), "A"),
            ]
        )
        report = self.store.ingest(manifest)
        self.assertEqual(report.succeeded, ("good",))
        self.assertEqual(report.failed, (("bad", "IoError"),))
        self.assertFalse(report.ok)
        self.assertEqual(self.store.read_mel("good").n_frames, 4410 // 256 + 1)

    def test_ingest_resamples(self):
        path = os.path.join(self.root, "low.wav")
        _io.write_wav(path, sine_wave(440.0, 0.5, sample_rate=16000), 16000)
        w = load_waveform(path, FeatureConfig())
        self.assertEqual(w.sample_rate, 22050)
        self.assertEqual(len(w), 11025)
