"""Overfits the synthesizer and the enhancement network on two utterances"""
import tempfile
import unittest

import numpy as np
import pytest

from tacovc.config import PipelineConfig, replace
from tacovc.core.phoneme_recognizer import build_pr_model, extract_ppg, train_pr
from tacovc.core.speech_enhancer import (
    build_taco_se,
    evaluate_enhancement,
    generate_smspec_corpus,
    train_taco_se,
)
from tacovc.core.synthesizer import (
    attention_alignment,
    attention_monotonicity,
    build_synthesizer,
    train_synthesizer,
)

from test._fixtures import toy_store  # isort: skip

pytestmark = pytest.mark.acceptance


class TestSynthesisOverfit(unittest.TestCase):
    """Trains recognizer, synthesizer and enhancement network in order"""

    @classmethod
    def setUpClass(cls):
        cls._tmp = tempfile.TemporaryDirectory()
        cls.manifest, cls.store = toy_store(cls._tmp.name, n_utterances=2)
        config = PipelineConfig.from_preset("desk")
        cls.pr = train_pr(
            build_pr_model(config.recognizer, seed=0),
            cls.manifest,
            cls.store,
            replace(config.hyper("recognizer"), steps=1000, batch_size=2),
        ).model
        cls.syn_result = train_synthesizer(
            build_synthesizer(config.synthesizer, seed=0),
            cls.pr,
            cls.manifest,
            cls.store,
            replace(config.hyper("synthesizer"), steps=5000, batch_size=2),
        )
        cls.syn = cls.syn_result.model
        cls.report = generate_smspec_corpus(cls.pr, cls.syn, cls.manifest, cls.store, "syn")
        cls.taco_se = train_taco_se(
            build_taco_se(cls.pr, cls.syn),
            cls.manifest,
            cls.store,
            replace(config.hyper("taco_se"), steps=500, batch_size=2),
            provenance="syn",
        ).model
        cls.enhancement = evaluate_enhancement(cls.taco_se, cls.manifest, cls.store, "syn")

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()

    def test_mel_l1(self):
        self.assertLess(np.mean(self.syn_result.mel_history[-20:]), 0.05)

    def test_attention_is_monotonic(self):
        for record in self.manifest:
            ppg = extract_ppg(self.pr, self.store.read_mel(record.utt_id))
            alignment = attention_alignment(self.syn, ppg)
            self.assertGreaterEqual(attention_monotonicity(alignment), 0.9)

    def test_enhancement_does_not_hurt(self):
        self.assertTrue(self.report.ok)
        self.assertLessEqual(
            self.enhancement.l1_enhanced, self.enhancement.l1_synthesized
        )

    def test_enhancement_keeps_true_spectrograms(self):
        self.assertLessEqual(self.enhancement.l1_identity, 0.1)

    def test_enhancement_sharpens(self):
        self.assertGreaterEqual(
            self.enhancement.sharpness_enhanced, self.enhancement.sharpness_synthesized
        )
