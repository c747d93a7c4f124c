"""Tests adaptation of a trained pipeline to a new speaker"""
import os
import tempfile
import unittest

from tacovc import _io, constants
from tacovc.checkpoint import CheckpointSet
from tacovc.errors import InvalidConfig, InvalidInput, MissingCheckpoint
from tacovc.extensions.adaptation import AdaptationPlan, adapt

from test._fixtures import tiny_checkpoints, tiny_config, toy_store  # isort: skip


class TestAdaptationPlan(unittest.TestCase):
    """Tests :class:`.AdaptationPlan`"""

    def test_from_config(self):
        config = tiny_config()
        plan = AdaptationPlan.from_config(None, config, vocoder_steps=5, taco_se_steps=None)
        self.assertEqual(plan.vocoder_steps, 5)
        self.assertEqual(plan.taco_se_steps, config.adaptation.taco_se_steps)
        self.assertEqual(plan.schedule().decay_steps, plan.synthesizer_steps)

    def test_negative_steps(self):
        with self.assertRaises(InvalidConfig):
            AdaptationPlan(None, synthesizer_steps=-1).validate()


class TestAdapt(unittest.TestCase):
    """Tests :func:`.adapt` on tiny networks"""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.root = self._tmp.name
        self.config = tiny_config(steps=1)
        self.base = tiny_checkpoints(os.path.join(self.root, "base"), self.config)
        self.manifest, self.store = toy_store(
            os.path.join(self.root, "target"), n_utterances=2, speakers=("B",)
        )
        self.out = CheckpointSet(os.path.join(self.root, "adapted"))
        self.base_digests = {
            kind: _io.file_sha256(self.base.path(kind)) for kind in constants.MODEL_KINDS
        }

    def tearDown(self):
        self._tmp.cleanup()

    def _log(self):
        return _io.read_jsonl(os.path.join(self.out.root, constants.ADAPTATION_LOG_NAME))

    def _assert_base_untouched(self):
        for kind, digest in self.base_digests.items():
            self.assertEqual(_io.file_sha256(self.base.path(kind)), digest)

    def test_zero_steps_copy_base(self):
        plan = AdaptationPlan(self.manifest, 0, 0, 0)
        ids = adapt(self.base, self.out, plan, self.store, self.config)
        for kind in constants.MODEL_KINDS:
            self.assertEqual(_io.file_sha256(self.out.path(kind)), self.base_digests[kind])
            self.assertEqual(ids[kind], self.base.checkpoint_id(kind))
        self.assertEqual(
            [entry["stage"] for entry in self._log()],
            ["recognizer", "synthesizer", "taco_se", "vocoder"],
        )

    def test_fine_tunes_in_order(self):
        plan = AdaptationPlan(self.manifest, 2, 2, 2)
        ids = adapt(self.base, self.out, plan, self.store, self.config)
        self.assertEqual(ids["recognizer"], self.base.checkpoint_id("recognizer"))
        for kind in ("synthesizer", "taco_se", "vocoder"):
            self.assertNotEqual(ids[kind], self.base.checkpoint_id(kind))
        log = self._log()
        self.assertEqual(
            [entry["stage"] for entry in log],
            ["recognizer", "synthesizer", "gen_smspec", "taco_se", "vocoder"],
        )
        self.assertEqual(log[1]["base_checkpoint_id"], self.base.checkpoint_id("synthesizer"))
        self.assertEqual(log[1]["steps"], 2)
        for utt_id in self.manifest.utt_ids:
            self.assertEqual(self.store.smspec_provenance(utt_id), ids["synthesizer"])
        self.assertEqual(self.out.synthesizer.extra["schedule_step"], 2)
        self._assert_base_untouched()

    def test_output_must_differ_from_base(self):
        plan = AdaptationPlan(self.manifest, 0, 0, 0)
        with self.assertRaises(InvalidInput):
            adapt(self.base, CheckpointSet(self.base.root), plan, self.store, self.config)

    def test_missing_base_checkpoint(self):
        os.remove(self.base.path("vocoder"))
        with self.assertRaises(MissingCheckpoint):
            adapt(
                self.base, self.out, AdaptationPlan(self.manifest, 0, 0, 0), self.store, self.config
            )
