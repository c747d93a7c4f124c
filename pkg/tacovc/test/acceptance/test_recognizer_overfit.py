"""Overfits the phoneme recognizer on the ten utterance toy corpus"""
import tempfile
import unittest

import numpy as np
import pytest

from tacovc.config import PipelineConfig, replace
from tacovc.core.phoneme_recognizer import (
    PhonemeSequence,
    build_pr_model,
    corpus_per,
    extract_ppg,
    greedy_decode,
    train_pr,
)
from tacovc.corpus import DatasetManifest, UtteranceRecord

from test._fixtures import toy_store  # isort: skip

pytestmark = pytest.mark.acceptance


def _shuffled(manifest: DatasetManifest, seed: int) -> DatasetManifest:
    """Permutes the interior phones of every transcript"""
    rng = np.random.default_rng(seed)
    records = []
    for record in manifest:
        phones = record.transcript.split()
        interior = phones[1:-1]
        rng.shuffle(interior)
        transcript = " ".join([phones[0], *interior, phones[-1]])
        records.append(UtteranceRecord(record.utt_id, record.audio, record.speaker, transcript))
    return DatasetManifest(records)


class TestRecognizerOverfit(unittest.TestCase):
    """Trains the desk recognizer for the preset step count"""

    @classmethod
    def setUpClass(cls):
        cls._tmp = tempfile.TemporaryDirectory()
        cls.manifest, cls.store = toy_store(cls._tmp.name, n_utterances=10)
        cls.config = PipelineConfig.from_preset("desk")
        cls.hyper = replace(cls.config.hyper("recognizer"), steps=2000)
        cls.result = train_pr(
            build_pr_model(cls.config.recognizer, seed=0), cls.manifest, cls.store, cls.hyper
        )

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()

    def _decode(self):
        refs, hyps = [], []
        for record in self.manifest:
            refs.append(PhonemeSequence.from_transcript(record.transcript))
            ppg = extract_ppg(self.result.model, self.store.read_mel(record.utt_id))
            hyps.append(greedy_decode(ppg))
        return refs, hyps

    def test_training_set_is_reproduced(self):
        refs, hyps = self._decode()
        self.assertEqual(corpus_per(refs, hyps), 0.0)
        for ref, hyp in zip(refs, hyps):
            self.assertEqual(ref.labels, hyp.labels)

    def test_shuffled_labels_do_not_fit(self):
        shuffled = train_pr(
            build_pr_model(self.config.recognizer, seed=0),
            _shuffled(self.manifest, seed=1),
            self.store,
            self.hyper,
        )
        matched = np.mean(self.result.loss_history[-50:])
        control = np.mean(shuffled.loss_history[-50:])
        self.assertGreater(control, 5.0 * matched)
