"""Tests the Taco-SE enhancement network"""
import tempfile
import unittest
from unittest import mock

import numpy as np

from tacovc import constants
from tacovc.config import replace
from tacovc.core import _shared
from tacovc.core.audio_features import LinearSpectrogram, MelSpectrogram
from tacovc.core.phoneme_recognizer import build_pr_model, extract_ppg
from tacovc.core.speech_enhancer import (
    EnhancementSource,
    build_taco_se,
    enhance,
    evaluate_enhancement,
    from_checkpoint,
    generate_smspec_corpus,
    load_sources,
    mean_l1,
    sample_pair,
    to_checkpoint,
    train_taco_se,
)
from tacovc.core.synthesizer import build_synthesizer, synthesize
from tacovc.errors import (
    AlignmentError,
    ConfigMismatch,
    FrozenWeightsChanged,
    MissingFeature,
    ProvenanceMismatch,
)

from test._fixtures import TINY_PR, TINY_SYNTHESIZER, tiny_hyper, toy_store  # isort: skip


def _source(n_frames: int = 6, with_smspec: bool = True) -> EnhancementSource:
    rng = np.random.default_rng(0)
    smspec = MelSpectrogram(rng.uniform(size=(n_frames, 80))) if with_smspec else None
    return EnhancementSource(
        "u1",
        MelSpectrogram(rng.uniform(size=(n_frames, 80))),
        LinearSpectrogram(rng.uniform(size=(n_frames, 513))),
        smspec,
    )


class TestBuild(unittest.TestCase):
    """Tests :func:`.build_taco_se`"""

    def setUp(self):
        self.pr = build_pr_model(TINY_PR, seed=0)
        self.syn = build_synthesizer(TINY_SYNTHESIZER, seed=1)

    def test_starts_as_recognizer_then_synthesizer(self):
        model = build_taco_se(self.pr, self.syn)
        mel = MelSpectrogram(np.random.default_rng(2).uniform(size=(9, 80)))
        expected, _ = synthesize(self.syn, extract_ppg(self.pr, mel))
        np.testing.assert_array_equal(enhance(model, mel).values, expected.values)

    def test_copies_the_synthesizer(self):
        model = build_taco_se(self.pr, self.syn)
        self.assertIsNot(model.synthesizer, self.syn)
        self.assertFalse(any(p.requires_grad for p in model.pr.parameters()))

    def test_leaves_callers_recognizer_trainable(self):
        self.pr.train()
        model = build_taco_se(self.pr, self.syn)
        self.assertIsNot(model.pr, self.pr)
        self.assertTrue(all(p.requires_grad for p in self.pr.parameters()))
        self.assertTrue(self.pr.training)

    def test_class_count_mismatch(self):
        pr = build_pr_model(replace(TINY_PR, n_classes=40), seed=0)
        with self.assertRaises(ConfigMismatch):
            build_taco_se(pr, self.syn)

    def test_recognizer_stays_in_eval_mode(self):
        model = build_taco_se(self.pr, self.syn).train()
        self.assertTrue(model.synthesizer.training)
        self.assertFalse(model.pr.training)

    def test_keeps_frame_count(self):
        model = build_taco_se(self.pr, self.syn)
        for n_frames in (1, 5, 31):
            mel = MelSpectrogram(np.random.default_rng(n_frames).uniform(size=(n_frames, 80)))
            enhanced = enhance(model, mel)
            self.assertEqual(enhanced.n_frames, n_frames)
            self.assertEqual(enhanced.role, constants.Role.ENHANCED)


class TestPairs(unittest.TestCase):
    """Tests :func:`.sample_pair`"""

    def test_identity_fraction(self):
        rng = np.random.default_rng(0)
        source = _source()
        kinds = [sample_pair(rng, source).kind for _ in range(10000)]
        fraction = np.mean([k == constants.PairKind.IDENTITY for k in kinds])
        self.assertGreaterEqual(fraction, 0.48)
        self.assertLessEqual(fraction, 0.52)

    def test_pair_contents(self):
        rng = np.random.default_rng(1)
        source = _source()
        for _ in range(20):
            pair = sample_pair(rng, source)
            self.assertIs(pair.target, source.mel)
            if pair.kind == constants.PairKind.IDENTITY:
                np.testing.assert_array_equal(pair.input.values, pair.target.values)
            else:
                self.assertIs(pair.input, source.smspec)

    def test_missing_synthesized_features(self):
        with self.assertRaises(MissingFeature):
            sample_pair(np.random.default_rng(0), _source(with_smspec=False))

    def test_mean_l1(self):
        a = MelSpectrogram(np.zeros((3, 80)))
        b = MelSpectrogram(np.full((3, 80), 0.5))
        self.assertAlmostEqual(mean_l1(a, b), 0.5)
        with self.assertRaises(AlignmentError):
            mean_l1(a, MelSpectrogram(np.zeros((4, 80))))


class TestTraining(unittest.TestCase):
    """Tests the synthesized corpus and enhancement training"""

    @classmethod
    def setUpClass(cls):
        cls._tmp = tempfile.TemporaryDirectory()
        cls.manifest, cls.store = toy_store(cls._tmp.name, n_utterances=2)
        cls.pr = build_pr_model(TINY_PR, seed=0).eval()
        cls.syn = build_synthesizer(TINY_SYNTHESIZER, seed=1).eval()
        cls.report = generate_smspec_corpus(
            cls.pr, cls.syn, cls.manifest, cls.store, "syn-1"
        )

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()

    def test_corpus_generated(self):
        self.assertTrue(self.report.ok)
        for utt_id in self.manifest.utt_ids:
            self.assertEqual(self.store.smspec_provenance(utt_id), "syn-1")
            self.assertEqual(
                self.store.read_smspec(utt_id).n_frames, self.store.read_mel(utt_id).n_frames
            )

    def test_recognizer_untouched_by_training(self):
        model = build_taco_se(self.pr, self.syn)
        before = _shared.state_dict_checksum(self.pr)
        result = train_taco_se(model, self.manifest, self.store, tiny_hyper(3), "syn-1")
        self.assertEqual(result.pr_checksum, before)
        self.assertEqual(_shared.state_dict_checksum(result.model.pr), before)
        self.assertEqual(len(result.loss_history), 3)
        self.assertEqual(result.step, 3)
        self.assertGreaterEqual(result.identity_fraction, 0.0)
        self.assertLessEqual(result.identity_fraction, 1.0)

    def test_changed_recognizer_is_reported(self):
        model = build_taco_se(self.pr, self.syn)
        with mock.patch.object(
            _shared, "state_dict_checksum", side_effect=["before", "after"]
        ):
            with self.assertRaises(FrozenWeightsChanged) as cm:
                train_taco_se(model, self.manifest, self.store, tiny_hyper(1), "syn-1")
        self.assertEqual(cm.exception.as_dict()["error"], "FrozenWeightsChanged")

    def test_seeded_training_is_reproducible(self):
        runs = [
            train_taco_se(
                build_taco_se(self.pr, self.syn),
                self.manifest,
                self.store,
                tiny_hyper(3),
                "syn-1",
            )
            for _ in range(2)
        ]
        self.assertEqual(runs[0].loss_history, runs[1].loss_history)
        self.assertEqual(runs[0].identity_fraction, runs[1].identity_fraction)
        self.assertEqual(
            _shared.state_dict_checksum(runs[0].model.synthesizer),
            _shared.state_dict_checksum(runs[1].model.synthesizer),
        )

    def test_stale_corpus(self):
        model = build_taco_se(self.pr, self.syn)
        with self.assertRaises(ProvenanceMismatch):
            train_taco_se(model, self.manifest, self.store, tiny_hyper(1), "syn-2")

    def test_missing_corpus(self):
        with tempfile.TemporaryDirectory() as tmp:
            manifest, store = toy_store(tmp, n_utterances=1)
            with self.assertRaises(MissingFeature):
                load_sources(manifest, store)
            sources = load_sources(manifest, store, require_smspec=False)
            self.assertIsNone(sources[0].smspec)

    def test_evaluation_report(self):
        report = evaluate_enhancement(
            build_taco_se(self.pr, self.syn), self.manifest, self.store, "syn-1"
        )
        self.assertEqual(report.n_utterances, 2)
        self.assertGreaterEqual(report.l1_synthesized, 0.0)
        self.assertEqual(set(report.to_dict()), {
            "n_utterances",
            "l1_synthesized",
            "l1_enhanced",
            "l1_identity",
            "sharpness_synthesized",
            "sharpness_enhanced",
        })

    def test_checkpoint_round_trip(self):
        model = build_taco_se(self.pr, self.syn)
        ckpt = to_checkpoint(model, self.store.features, 4, recognizer_id="pr-1")
        self.assertEqual(ckpt.kind, "taco_se")
        self.assertEqual(ckpt.extra["recognizer"], "pr-1")
        restored = from_checkpoint(ckpt, self.pr)
        mel = self.store.read_mel(self.manifest.utt_ids[0])
        np.testing.assert_array_equal(enhance(model, mel).values, enhance(restored, mel).values)
