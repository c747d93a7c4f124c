"""Limited-data adaptation of a trained pipeline to a new target speaker

Stages run strictly in order:

#. Fine-tune the synthesizer on the target data with a fresh scheduled
   sampling schedule
#. Regenerate the synthesized spectrograms of the target data with the
   fine-tuned synthesizer
#. Fine-tune the enhancement network on those spectrograms
#. Fine-tune the vocoder

The recognizer is speaker independent and copied byte for byte. A stage with
zero steps copies its base checkpoint unchanged. Every stage appends one
record to ``adaptation.jsonl`` in the output directory.
"""
import logging
import os
import shutil
import time
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

from .. import _io, constants
from ..checkpoint import CheckpointSet
from ..config import PipelineConfig, ScheduledSamplingSchedule, replace
from ..corpus import DatasetManifest, FeatureStore, StageReport
from ..errors import InvalidConfig, InvalidInput
from ..core import phoneme_recognizer, speech_enhancer, synthesizer, vocoder
from ..core.phoneme_recognizer import PRModel
from ..core.synthesizer import SynthesizerModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdaptationPlan:
    """Target data and fine-tuning step counts of an adaptation run

    The recognizer has no entry: it is never adapted.
    """

    manifest: DatasetManifest = field(compare=False)
    synthesizer_steps: int = 10000
    taco_se_steps: int = 10000
    vocoder_steps: int = 20000
    ss_start_rate: float = 1.0
    ss_final_rate: float = 0.33
    vocoder_condition_on_enhanced: bool = False
    """Fine-tune the vocoder on enhanced instead of true mel spectrograms"""

    @classmethod
    def from_config(
        cls, manifest: DatasetManifest, config: PipelineConfig, **overrides: Any
    ) -> "AdaptationPlan":
        """Builds a plan from the adaptation defaults of a pipeline"""
        defaults = config.adaptation
        values: Dict[str, Any] = {
            "synthesizer_steps": defaults.synthesizer_steps,
            "taco_se_steps": defaults.taco_se_steps,
            "vocoder_steps": defaults.vocoder_steps,
            "ss_start_rate": config.synthesizer.ss_start_rate,
            "ss_final_rate": config.synthesizer.ss_final_rate,
            "vocoder_condition_on_enhanced": defaults.vocoder_condition_on_enhanced,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(manifest, **values)

    def validate(self) -> None:
        """:raise InvalidConfig: If a step count is negative or the schedule is
        invalid
        """
        for name in ("synthesizer_steps", "taco_se_steps", "vocoder_steps"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be non-negative")
        self.schedule().validate()

    def schedule(self) -> ScheduledSamplingSchedule:
        """Fresh schedule decaying across the synthesizer fine-tuning steps"""
        return ScheduledSamplingSchedule(
            self.ss_start_rate, self.ss_final_rate, self.synthesizer_steps
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "utterances": len(self.manifest),
            "synthesizer_steps": self.synthesizer_steps,
            "taco_se_steps": self.taco_se_steps,
            "vocoder_steps": self.vocoder_steps,
            "ss_start_rate": self.ss_start_rate,
            "ss_final_rate": self.ss_final_rate,
            "vocoder_condition_on_enhanced": self.vocoder_condition_on_enhanced,
        }


def regenerate_target_smspecs(
    fine_tuned_syn: SynthesizerModel,
    pr: PRModel,
    target_manifest: DatasetManifest,
    store: FeatureStore,
    provenance: str,
) -> StageReport:
    """Synthesizes the target data with the fine-tuned synthesizer

    :param provenance: Checkpoint id of the fine-tuned synthesizer
    """
    return speech_enhancer.generate_smspec_corpus(
        pr, fine_tuned_syn, target_manifest, store, provenance
    )


class _Log:
    def __init__(self, path: str, base: CheckpointSet):
        self.path = path
        self.base = base
        self.run_started = time.time()

    def record(
        self,
        stage: str,
        checkpoint_id: Optional[str],
        steps: int,
        started: float,
        **extra: Any,
    ) -> None:
        entry = {
            "stage": stage,
            "base_checkpoint_id": (
                self.base.checkpoint_id(stage) if stage in constants.MODEL_KINDS else None
            ),
            "checkpoint_id": checkpoint_id,
            "steps": steps,
            "wall_time": round(time.time() - started, 3),
            "run_started": self.run_started,
        }
        entry.update(extra)
        _io.append_jsonl(self.path, entry)
        logger.info(f"Adaptation stage {stage} done: {checkpoint_id} ({steps} steps)")


def _copy(base: CheckpointSet, out: CheckpointSet, kind: constants.ModelKind) -> str:
    shutil.copyfile(base.path(kind), out.path(kind))
    return out.checkpoint_id(kind)


def adapt(
    base: CheckpointSet,
    out: CheckpointSet,
    plan: AdaptationPlan,
    store: FeatureStore,
    config: PipelineConfig,
) -> Dict[str, str]:
    """Adapts the base checkpoints to the target speaker of ``plan``

    :param base: Trained checkpoints, never modified
    :param out: Directory receiving the adapted checkpoints
    :param store: Feature store holding the extracted target features
    :return: Checkpoint id of every adapted network
    :raise MissingCheckpoint: If a base checkpoint is missing
    :raise InvalidInput: If the target manifest is empty or ``out`` is ``base``
    :raise ConfigMismatch: If the base checkpoints use other feature parameters
    """
    plan.validate()
    plan.manifest.require_non_empty()
    if os.path.abspath(base.root) == os.path.abspath(out.root):
        raise InvalidInput("Adapted checkpoints must go to another directory")
    base.require_same_features(constants.MODEL_KINDS, config.features)
    os.makedirs(out.root, exist_ok=True)
    log = _Log(os.path.join(out.root, constants.ADAPTATION_LOG_NAME), base)
    manifest = plan.manifest
    features = config.features

    started = time.time()
    ids = {"recognizer": _copy(base, out, "recognizer")}
    log.record("recognizer", ids["recognizer"], 0, started, copied=True)
    pr = phoneme_recognizer.from_checkpoint(base.recognizer)

    # (1) synthesizer
    started = time.time()
    syn_ckpt = base.synthesizer
    syn = synthesizer.from_checkpoint(syn_ckpt)
    if plan.synthesizer_steps == 0:
        ids["synthesizer"] = _copy(base, out, "synthesizer")
    else:
        hyper = replace(config.hyper("synthesizer"), steps=plan.synthesizer_steps)
        result = synthesizer.train_synthesizer(
            syn, pr, manifest, store, hyper, schedule=plan.schedule()
        )
        ids["synthesizer"] = out.save(
            synthesizer.to_checkpoint(
                result.model,
                features,
                syn_ckpt.step + plan.synthesizer_steps,
                schedule_step=result.step,
            )
        )
    log.record("synthesizer", ids["synthesizer"], plan.synthesizer_steps, started)

    # (2) synthesized spectrograms of the target data
    needs_smspec = plan.taco_se_steps > 0
    if needs_smspec:
        started = time.time()
        report = regenerate_target_smspecs(syn, pr, manifest, store, ids["synthesizer"])
        log.record("gen_smspec", ids["synthesizer"], 0, started, report=report.to_dict())

    # (3) enhancement network
    started = time.time()
    se_ckpt = base.taco_se
    taco_se = speech_enhancer.from_checkpoint(se_ckpt, pr)
    if plan.taco_se_steps == 0:
        ids["taco_se"] = _copy(base, out, "taco_se")
    else:
        hyper = replace(config.hyper("taco_se"), steps=plan.taco_se_steps)
        result = speech_enhancer.train_taco_se(
            taco_se,
            manifest,
            store,
            hyper,
            provenance=ids["synthesizer"],
            schedule=replace(plan.schedule(), decay_steps=plan.taco_se_steps),
        )
        ids["taco_se"] = out.save(
            speech_enhancer.to_checkpoint(
                result.model,
                features,
                se_ckpt.step + plan.taco_se_steps,
                recognizer_id=ids["recognizer"],
            )
        )
    log.record("taco_se", ids["taco_se"], plan.taco_se_steps, started)

    # (4) vocoder
    started = time.time()
    voc_ckpt = base.vocoder
    if plan.vocoder_steps == 0:
        ids["vocoder"] = _copy(base, out, "vocoder")
    else:
        model = vocoder.from_checkpoint(voc_ckpt)
        hyper = replace(config.hyper("vocoder"), steps=plan.vocoder_steps)
        conditioning = None
        if plan.vocoder_condition_on_enhanced:
            conditioning = lambda m: speech_enhancer.enhance(taco_se, m)  # noqa: E731
        result = vocoder.train_vocoder(
            model, manifest, store, hyper, start_step=voc_ckpt.step, conditioning=conditioning
        )
        ids["vocoder"] = out.save(vocoder.to_checkpoint(result.model, features, result.step))
    log.record(
        "vocoder",
        ids["vocoder"],
        plan.vocoder_steps,
        started,
        condition_on_enhanced=plan.vocoder_condition_on_enhanced,
    )
    return ids


__all__ = ["AdaptationPlan", "adapt", "regenerate_target_smspecs"]
