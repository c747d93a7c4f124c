"""Trains a speaker A pipeline, adapts it to speaker B and converts through
the command line
"""
import os
import tempfile
import unittest

import numpy as np
import pytest

from tacovc import _io
from tacovc.checkpoint import CheckpointSet
from tacovc.cli import main
from tacovc.config import PipelineConfig, replace
from tacovc.core import phoneme_recognizer, speech_enhancer, synthesizer, vocoder
from tacovc.corpus import FeatureStore, load_waveform
from tacovc.extensions.adaptation import AdaptationPlan, adapt
from tacovc.extensions.toy_corpus import make_toy_corpus
from tacovc.pipeline import ConversionPipeline

from test._fixtures import TINY_VOCODER  # isort: skip

pytestmark = pytest.mark.acceptance


class TestAdaptationRun(unittest.TestCase):
    """A to B adaptation on a parallel toy corpus"""

    @classmethod
    def setUpClass(cls):
        cls._tmp = tempfile.TemporaryDirectory()
        root = cls._tmp.name
        config = PipelineConfig.from_preset("desk")
        cls.config = replace(config, vocoder=TINY_VOCODER)
        features = cls.config.features

        corpus = make_toy_corpus(os.path.join(root, "corpus"), 4, ("A", "B"), 0, features)
        cls.store = FeatureStore(os.path.join(root, "features"), features)
        assert cls.store.ingest(corpus).ok
        cls.source = corpus.filter_speaker("A")
        cls.target = corpus.filter_speaker("B")

        def hyper(kind, steps):
            return replace(cls.config.hyper(kind), steps=steps, batch_size=4)

        pr = phoneme_recognizer.train_pr(
            phoneme_recognizer.build_pr_model(cls.config.recognizer, seed=0),
            corpus,
            cls.store,
            hyper("recognizer", 1000),
        ).model
        syn = synthesizer.train_synthesizer(
            synthesizer.build_synthesizer(cls.config.synthesizer, seed=0),
            pr,
            cls.source,
            cls.store,
            hyper("synthesizer", 1500),
        ).model
        voc = vocoder.build_vocoder(cls.config.vocoder, seed=0)
        vocoder.train_examples(
            voc, vocoder.load_examples(cls.source, cls.store), hyper("vocoder", 20)
        )
        cls.base = CheckpointSet(os.path.join(root, "base"))
        pr_id = cls.base.save(phoneme_recognizer.to_checkpoint(pr, features, 1000))
        cls.base.save(synthesizer.to_checkpoint(syn, features, 1500))
        cls.base.save(
            speech_enhancer.to_checkpoint(
                speech_enhancer.build_taco_se(pr, syn), features, 0, recognizer_id=pr_id
            )
        )
        cls.base.save(vocoder.to_checkpoint(voc, features, 20))

        cls.adapted = CheckpointSet(os.path.join(root, "adapted"))
        plan = AdaptationPlan(cls.target, 1000, 200, 0)
        adapt(cls.base, cls.adapted, plan, cls.store, cls.config)

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()

    def _mean_l1(self, checkpoints: CheckpointSet) -> float:
        pipeline = ConversionPipeline(checkpoints, self.config, vocoder_kind="griffinlim")
        losses = []
        for record in self.target:
            parallel = self.source[record.utt_id.replace("B_", "A_", 1)]
            source = load_waveform(parallel.audio, self.config.features)
            _, _, _, enhanced, _ = pipeline.spectrograms(source)
            truth = self.store.read_mel(record.utt_id)
            n = min(enhanced.n_frames, truth.n_frames)
            losses.append(np.mean(np.abs(enhanced.values[:n] - truth.values[:n])))
        return float(np.mean(losses))

    def test_adaptation_moves_towards_target(self):
        self.assertLess(self._mean_l1(self.adapted), self._mean_l1(self.base))

    def test_recognizer_is_shared(self):
        self.assertEqual(
            _io.file_sha256(self.adapted.path("recognizer")),
            _io.file_sha256(self.base.path("recognizer")),
        )

    def test_convert_command(self):
        record = next(iter(self.source))
        out = os.path.join(self._tmp.name, "out")
        common = ["--checkpoint-root", self.adapted.root, "--quiet", "--seed", "3"]

        def convert(name, *extra):
            path = os.path.join(out, name)
            self.assertEqual(main(["convert", record.audio, "--output", path, *common, *extra]), 0)
            return path

        first = convert("a.wav")
        again = convert("b.wav")
        plain = convert("c.wav", "--no-enhance")

        source, _ = _io.read_wav(record.audio)
        converted, sample_rate = _io.read_wav(first)
        self.assertEqual(sample_rate, 22050)
        self.assertLessEqual(abs(len(converted) - len(source)), 256)
        self.assertEqual(_io.file_sha256(first), _io.file_sha256(again))
        self.assertNotEqual(_io.file_sha256(first), _io.file_sha256(plain))
