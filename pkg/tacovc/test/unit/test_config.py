"""Tests configuration loading and validation"""
import os
import tempfile
import unittest

import yaml

from tacovc.config import (
    FeatureConfig,
    PipelineConfig,
    PRConfig,
    ScheduledSamplingSchedule,
    SynthesizerConfig,
    VocoderConfig,
    replace,
)
from tacovc.errors import ConfigMismatch, InvalidConfig


class TestPresets(unittest.TestCase):
    """Tests :meth:`.PipelineConfig.from_preset`"""

    def test_desk_preset(self):
        config = PipelineConfig.from_preset("desk")
        self.assertEqual(config.features.n_mels, 80)
        self.assertEqual(config.recognizer.n_classes, 62)
        self.assertEqual(config.recognizer.channels, (64, 64, 64, 64))
        self.assertEqual(config.hyper("vocoder").window_frames, 8)

    def test_paper_preset(self):
        config = PipelineConfig.from_preset("paper")
        self.assertEqual(len(config.recognizer.channels), 12)
        self.assertEqual(config.vocoder.layers_per_stack, 10)
        self.assertEqual(config.hyper("synthesizer").steps, 100000)

    def test_presets_share_features(self):
        desk = PipelineConfig.from_preset("desk")
        paper = PipelineConfig.from_preset("paper")
        self.assertEqual(desk.features.hash(), paper.features.hash())

    def test_overrides_merge(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "override.yaml")
            with open(path, "w") as f:
                yaml.safe_dump({"hypers": {"recognizer": {"steps": 7}}, "seed": 3}, f)
            config = PipelineConfig.from_preset("desk", path)
        self.assertEqual(config.hyper("recognizer").steps, 7)
        self.assertEqual(config.hyper("recognizer").batch_size, 5)
        self.assertEqual(config.seed, 3)

    def test_unknown_key(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "override.yaml")
            with open(path, "w") as f:
                yaml.safe_dump({"vocoder": {"n_layers": 3}}, f)
            with self.assertRaises(InvalidConfig):
                PipelineConfig.from_preset("desk", path)

    def test_missing_file(self):
        with self.assertRaises(InvalidConfig):
            PipelineConfig.from_preset("desk", "/nonexistent/override.yaml")


class TestValidation(unittest.TestCase):
    """Tests the ``validate`` methods of the configuration sections"""

    def test_recognizer_stride(self):
        with self.assertRaises(InvalidConfig):
            PRConfig(strides=(1, 2, 1, 1)).validate()

    def test_recognizer_even_kernel(self):
        with self.assertRaises(InvalidConfig):
            PRConfig(kernel_sizes=(3, 4, 3, 3)).validate()

    def test_vocoder_stride_product(self):
        with self.assertRaises(ConfigMismatch):
            VocoderConfig(upsample_strides=(16, 8)).validate()
        VocoderConfig(upsample_strides=(4, 4, 16)).validate()

    def test_schedule_must_not_increase(self):
        with self.assertRaises(InvalidConfig):
            ScheduledSamplingSchedule(0.3, 0.5, 100).validate()

    def test_synthesizer_odd_widths(self):
        with self.assertRaises(InvalidConfig):
            SynthesizerConfig(encoder_dim=127).validate()

    def test_synthesizer_schedule_spans_training(self):
        schedule = SynthesizerConfig().schedule(1234)
        self.assertEqual(schedule.decay_steps, 1234)
        self.assertEqual(SynthesizerConfig(ss_decay_steps=10).schedule(1234).decay_steps, 10)

    def test_cross_section_mismatch(self):
        config = replace(PipelineConfig(), vocoder=VocoderConfig(n_mels=64))
        with self.assertRaises(InvalidConfig):
            config.validate()

    def test_feature_mel_range(self):
        with self.assertRaises(InvalidConfig):
            FeatureConfig(fmax=20000.0).validate()


class TestFeatureHash(unittest.TestCase):
    """Tests :meth:`.FeatureConfig.hash`"""

    def test_stable_and_sensitive(self):
        self.assertEqual(FeatureConfig().hash(), FeatureConfig().hash())
        self.assertNotEqual(FeatureConfig().hash(), FeatureConfig(n_mels=64).hash())
        self.assertEqual(len(FeatureConfig().hash()), 16)
