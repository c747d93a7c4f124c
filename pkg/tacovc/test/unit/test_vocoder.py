"""Tests the autoregressive vocoder"""
import unittest

import numpy as np
import pytest
import torch

from tacovc.config import FeatureConfig, PipelineConfig, VocoderConfig, replace
from tacovc.core import _shared
from tacovc.core.audio_features import MelSpectrogram, Waveform, mu_law_compress
from tacovc.core.vocoder import (
    align_codes,
    build_vocoder,
    from_checkpoint,
    generate,
    probabilities,
    receptive_field,
    teacher_forced_accuracy,
    to_checkpoint,
    train_examples,
    upsample_conditioning,
)
from tacovc.errors import AlignmentError, ConfigMismatch, ShapeError
from tacovc.extensions.toy_corpus import sine_wave

from test._fixtures import TINY_VOCODER, tiny_hyper  # isort: skip


def _mel(n_frames: int, seed: int = 0, **kwargs) -> MelSpectrogram:
    return MelSpectrogram(
        np.random.default_rng(seed).uniform(size=(n_frames, 80)), **kwargs
    )


@pytest.mark.parametrize(
    "config, expected",
    [
        (VocoderConfig(), 511),
        (PipelineConfig.from_preset("paper").vocoder, 2047),
        (TINY_VOCODER, 8),
        (replace(TINY_VOCODER, layers_per_stack=1), 2),
        (replace(TINY_VOCODER, kernel_size=1), 1),
    ],
)
def test_receptive_field(config, expected):
    assert receptive_field(config) == expected


class TestStructure(unittest.TestCase):
    """Tests causality and the conditioning path"""

    def setUp(self):
        self.model = build_vocoder(TINY_VOCODER, seed=0).eval()
        self.inputs = torch.randint(0, 256, (1, 40), generator=torch.Generator().manual_seed(1))
        self.condition = torch.rand(1, 80, 40, generator=torch.Generator().manual_seed(2))

    def _changed_positions(self, position: int):
        perturbed = self.inputs.clone()
        perturbed[0, position] = (perturbed[0, position] + 128) % 256
        with torch.no_grad():
            base = self.model(self.inputs, self.condition)
            other = self.model(perturbed, self.condition)
        return torch.nonzero((base - other).abs().amax(dim=1)[0] > 0).flatten().tolist()

    def test_dependency_span_is_receptive_field(self):
        rf = receptive_field(TINY_VOCODER)
        self.assertEqual(self._changed_positions(20), list(range(20, 20 + rf)))

    def test_causal(self):
        for position in (0, 13, 39):
            self.assertTrue(all(t >= position for t in self._changed_positions(position)))

    def test_teacher_forcing_shift(self):
        codes = torch.tensor([[5, 6, 7]])
        self.assertEqual(self.model.shift(codes).tolist(), [[128, 5, 6]])

    def test_upsampled_conditioning(self):
        condition = upsample_conditioning(self.model, _mel(3))
        self.assertEqual(condition.shape, (80, 3 * 256))

    def test_strides_must_match_hop(self):
        with self.assertRaises(ConfigMismatch):
            build_vocoder(replace(TINY_VOCODER, upsample_strides=(16, 8)))

    def test_hop_mismatch(self):
        with self.assertRaises(ConfigMismatch):
            upsample_conditioning(self.model, _mel(3, hop_samples=128))

    def test_band_mismatch(self):
        with self.assertRaises(ShapeError):
            upsample_conditioning(self.model, MelSpectrogram(np.zeros((3, 64))))


class TestGeneration(unittest.TestCase):
    """Tests :func:`.generate`"""

    @classmethod
    def setUpClass(cls):
        cls.model = build_vocoder(TINY_VOCODER, seed=0)
        cls.mel = _mel(2)

    def test_length(self):
        w = generate(self.model, self.mel)
        self.assertEqual(len(w), 2 * 256)
        self.assertEqual(w.sample_rate, 22050)
        self.assertLessEqual(float(np.max(np.abs(w.samples))), 1.0)

    def test_argmax_follows_teacher_forced_probabilities(self):
        w = generate(self.model, self.mel, "ARGMAX")
        codes = mu_law_compress(w.samples)
        p = probabilities(self.model, codes, self.mel)
        self.assertEqual(p.shape, (512, 256))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
        self.assertGreaterEqual(float(np.mean(np.argmax(p, axis=1) == codes)), 0.99)

    def test_sampling_is_seeded(self):
        a = generate(self.model, self.mel, "SAMPLE", seed=3)
        b = generate(self.model, self.mel, "SAMPLE", seed=3)
        c = generate(self.model, self.mel, "SAMPLE", seed=4)
        np.testing.assert_array_equal(a.samples, b.samples)
        self.assertFalse(np.array_equal(a.samples, c.samples))

    def test_checkpoint_round_trip(self):
        ckpt = to_checkpoint(self.model, FeatureConfig(), 9)
        self.assertEqual(ckpt.extra["receptive_field"], 8)
        restored = from_checkpoint(ckpt)
        np.testing.assert_array_equal(
            generate(self.model, self.mel).samples, generate(restored, self.mel).samples
        )


class TestTraining(unittest.TestCase):
    """Tests :func:`.align_codes` and short training runs"""

    def test_align_pads_and_trims(self):
        mel = _mel(4)
        short = Waveform(sine_wave(200.0, 900 / 22050), 22050)
        long = Waveform(sine_wave(200.0, 1100 / 22050), 22050)
        for w in (short, long):
            example = align_codes("u", w, mel)
            self.assertEqual(example.codes.shape, (1024,))
        self.assertTrue(np.all(align_codes("u", short, mel).codes[900:] == 128))

    def test_align_rejects_far_lengths(self):
        w = Waveform(sine_wave(200.0, 1400 / 22050), 22050)
        with self.assertRaises(AlignmentError):
            align_codes("u", w, _mel(4))

    def test_short_training(self):
        model = build_vocoder(TINY_VOCODER, seed=0)
        example = align_codes("u", Waveform(sine_wave(300.0, 1024 / 22050), 22050), _mel(4))
        history = train_examples(model, [example], tiny_hyper(3))
        self.assertEqual(len(history), 3)
        self.assertTrue(all(np.isfinite(history)))
        accuracy = teacher_forced_accuracy(model, example)
        self.assertGreaterEqual(accuracy, 0.0)
        self.assertLessEqual(accuracy, 1.0)

    def test_seeded_training_is_reproducible(self):
        example = align_codes("u", Waveform(sine_wave(300.0, 1024 / 22050), 22050), _mel(4))
        models = [build_vocoder(TINY_VOCODER, seed=0) for _ in range(2)]
        histories = [train_examples(m, [example], tiny_hyper(3)) for m in models]
        self.assertEqual(histories[0], histories[1])
        self.assertEqual(
            _shared.state_dict_checksum(models[0]), _shared.state_dict_checksum(models[1])
        )
