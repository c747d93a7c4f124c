"""Tests the debug images"""
import os
import tempfile
import unittest

import cv2
import numpy as np

from tacovc.extensions.visualization import (
    alignment_image,
    spectrogram_image,
    stacked_image,
    write_conversion_image,
    write_image,
)


class TestImages(unittest.TestCase):
    """Tests the image builders"""

    def test_spectrogram_orientation(self):
        values = np.zeros((10, 80))
        values[:, 0] = 1.0
        image = spectrogram_image(values)
        self.assertEqual(image.shape, (160, 20, 3))
        self.assertFalse(np.array_equal(image[-1, 0], image[0, 0]))

    def test_constant_input(self):
        image = alignment_image(np.full((4, 4), 0.25))
        self.assertEqual(image.dtype, np.uint8)

    def test_stacked_widths(self):
        image = stacked_image(
            [spectrogram_image(np.random.rand(10, 80)), spectrogram_image(np.random.rand(14, 80))],
            ["a", "b"],
        )
        self.assertEqual(image.shape[1], 28)


class TestWriting(unittest.TestCase):
    """Tests writing debug images"""

    def test_conversion_image(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "debug", "u1.png")
            mel = np.random.default_rng(0).uniform(size=(12, 80))
            self.assertTrue(write_conversion_image(path, mel, mel, mel))
            self.assertEqual(cv2.imread(path).shape[0], 3 * 160)

    def test_unwritable_path_is_not_fatal(self):
        with tempfile.TemporaryDirectory() as tmp:
            blocker = os.path.join(tmp, "file")
            open(blocker, "w").close()
            self.assertFalse(write_image(os.path.join(blocker, "x.png"), np.zeros((4, 4, 3))))
