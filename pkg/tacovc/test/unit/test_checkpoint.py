"""Tests the checkpoint container and checkpoint directories"""
import os
import tempfile
import unittest

import torch
import torch.nn as nn

from tacovc.checkpoint import (
    CheckpointSet,
    ModelCheckpoint,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
)
from tacovc.config import FeatureConfig, PRConfig
from tacovc.errors import ConfigMismatch, IoError, MissingCheckpoint


def _checkpoint(seed: int = 0, features: FeatureConfig = FeatureConfig(), kind="recognizer"):
    torch.manual_seed(seed)
    return ModelCheckpoint.from_module(
        kind, nn.Linear(4, 3), PRConfig(), features, step=5, extra={"note": "x"}
    )


class TestContainer(unittest.TestCase):
    """Tests :func:`.encode_checkpoint` and :func:`.decode_checkpoint`"""

    def test_fields_survive(self):
        ckpt = _checkpoint()
        decoded = decode_checkpoint(encode_checkpoint(ckpt))
        self.assertEqual(decoded.kind, "recognizer")
        self.assertEqual(decoded.step, 5)
        self.assertEqual(decoded.extra, {"note": "x"})
        self.assertEqual(decoded.feature_hash, FeatureConfig().hash())
        self.assertEqual(sorted(decoded.tensors), ["bias", "weight"])
        self.assertEqual(decoded.tensors["weight"].tobytes(), ckpt.tensors["weight"].tobytes())

    def test_id_is_content_addressed(self):
        a = decode_checkpoint(encode_checkpoint(_checkpoint(0)))
        b = decode_checkpoint(encode_checkpoint(_checkpoint(0)))
        c = decode_checkpoint(encode_checkpoint(_checkpoint(1)))
        self.assertEqual(a.checkpoint_id, b.checkpoint_id)
        self.assertNotEqual(a.checkpoint_id, c.checkpoint_id)
        self.assertEqual(len(a.checkpoint_id), 16)

    def test_bad_magic(self):
        data = b"XXXX" + encode_checkpoint(_checkpoint())[4:]
        with self.assertRaises(IoError):
            decode_checkpoint(data)

    def test_load_into_wrong_module(self):
        with self.assertRaises(ConfigMismatch):
            _checkpoint().load_into(nn.Linear(5, 3))

    def test_load_into_restores_weights(self):
        ckpt = _checkpoint(3)
        module = ckpt.load_into(nn.Linear(4, 3))
        self.assertEqual(
            module.weight.detach().numpy().tobytes(), ckpt.tensors["weight"].tobytes()
        )

    def test_require_features(self):
        with self.assertRaises(ConfigMismatch):
            _checkpoint().require_features(FeatureConfig(n_mels=64))


class TestCheckpointSet(unittest.TestCase):
    """Tests :class:`.CheckpointSet`"""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.checkpoints = CheckpointSet(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_save_and_load(self):
        checkpoint_id = self.checkpoints.save(_checkpoint())
        self.assertEqual(self.checkpoints.checkpoint_id("recognizer"), checkpoint_id)
        self.assertEqual(self.checkpoints.recognizer.checkpoint_id, checkpoint_id)
        self.assertEqual(self.checkpoints.ids()["recognizer"], checkpoint_id)
        self.assertIsNone(self.checkpoints.ids()["vocoder"])

    def test_cache_follows_file(self):
        self.checkpoints.save(_checkpoint(0))
        first = self.checkpoints.recognizer
        self.assertIs(self.checkpoints.recognizer, first)
        self.checkpoints.save(_checkpoint(1))
        os.utime(self.checkpoints.path("recognizer"), ns=(1, 1))
        self.assertNotEqual(self.checkpoints.recognizer.checkpoint_id, first.checkpoint_id)

    def test_missing(self):
        with self.assertRaises(MissingCheckpoint):
            self.checkpoints.require(["recognizer", "vocoder"])
        with self.assertRaises(MissingCheckpoint):
            self.checkpoints.checkpoint_id("vocoder")
        with self.assertRaises(MissingCheckpoint):
            load_checkpoint(self.checkpoints.path("vocoder"))

    def test_kind_mismatch(self):
        self.checkpoints.save(_checkpoint())
        with self.assertRaises(ConfigMismatch):
            load_checkpoint(self.checkpoints.path("recognizer"), "vocoder")

    def test_mixed_features(self):
        self.checkpoints.save(_checkpoint())
        self.checkpoints.save(_checkpoint(features=FeatureConfig(n_mels=64), kind="vocoder"))
        with self.assertRaises(ConfigMismatch):
            self.checkpoints.require_same_features(["recognizer", "vocoder"])
        with self.assertRaises(ConfigMismatch):
            self.checkpoints.require_same_features(["vocoder"], FeatureConfig())
        self.assertEqual(
            self.checkpoints.require_same_features(["recognizer"], FeatureConfig()),
            FeatureConfig().hash(),
        )
