"""Command line front end

Every verb maps to one pipeline operation and prints a JSON summary on stdout.
Pipeline errors are reported as one JSON line ``{"error": ..., "message": ...}``
on stderr with exit code 1, usage errors exit with code 2 and unexpected errors
with code 3.

.. code-block:: bash
    :caption: Desk-scale toy run

    tacovc make-toy-corpus --out-dir toy
    tacovc features --manifest toy/manifest.jsonl --feature-dir toy/features
    tacovc train-pr --manifest toy/manifest.jsonl --feature-dir toy/features
    tacovc train-syn --manifest toy/manifest.jsonl --feature-dir toy/features
    tacovc gen-smspec --manifest toy/manifest.jsonl --feature-dir toy/features
    tacovc train-se --manifest toy/manifest.jsonl --feature-dir toy/features
    tacovc train-vocoder --manifest toy/manifest.jsonl --feature-dir toy/features
    tacovc convert toy/wav/A_000.wav --output converted.wav
"""
import argparse
import cProfile
import io
import json
import logging
import os
import pstats
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence

from . import _io, constants
from .checkpoint import CheckpointSet, load_checkpoint
from .config import PipelineConfig, TrainingHyper, replace
from .corpus import DatasetManifest, FeatureStore
from .core import _shared, phoneme_recognizer, speech_enhancer, synthesizer, vocoder
from .core.phoneme_recognizer import PhonemeSequence
from .errors import InvalidConfig, InvalidInput, TacoVCError
from .extensions import toy_corpus, visualization
from .extensions.adaptation import AdaptationPlan, adapt
from .pipeline import ConversionPipeline, convert_batch

logger = logging.getLogger(__name__)

EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_UNEXPECTED = 3

LOG_FORMAT = "%(asctime)s [%(levelname)s]: %(message)s"
LOG_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

Handler = Callable[[argparse.Namespace, PipelineConfig], Any]


def _checkpoints(args: argparse.Namespace, config: PipelineConfig) -> CheckpointSet:
    root = (
        args.checkpoint_root
        or os.environ.get(constants.ENV_CHECKPOINT_ROOT)
        or config.checkpoint_dir
    )
    if not root:
        raise InvalidConfig(
            f"No checkpoint directory: pass --checkpoint-root or set "
            f"{constants.ENV_CHECKPOINT_ROOT}"
        )
    os.makedirs(root, exist_ok=True)
    return CheckpointSet(root)


def _data(args: argparse.Namespace, config: PipelineConfig):
    manifest = DatasetManifest.from_jsonl(args.manifest)
    manifest.require_non_empty()
    return manifest, FeatureStore(args.feature_dir, config.features)


def _hyper(
    args: argparse.Namespace, config: PipelineConfig, kind: constants.ModelKind
) -> TrainingHyper:
    hyper = config.hyper(kind)
    changes = {
        "steps": args.steps,
        "batch_size": args.batch_size,
        "learning_rate": args.learning_rate,
    }
    hyper = replace(hyper, **{k: v for k, v in changes.items() if v is not None})
    hyper.validate()
    return hyper


def _resume(args: argparse.Namespace, checkpoints: CheckpointSet, kind: constants.ModelKind):
    if getattr(args, "resume", False) and checkpoints.exists(kind):
        return checkpoints.load(kind)
    return None


def _cmd_make_toy_corpus(args: argparse.Namespace, config: PipelineConfig):
    manifest = toy_corpus.make_toy_corpus(
        args.out_dir, args.utterances, args.speakers, args.seed, config.features
    )
    return {
        "manifest": os.path.join(args.out_dir, toy_corpus.MANIFEST_NAME),
        "utterances": len(manifest),
        "speakers": manifest.speakers,
    }


def _cmd_features(args: argparse.Namespace, config: PipelineConfig):
    manifest, store = _data(args, config)
    report = store.ingest(manifest, overwrite=args.overwrite)
    if not report.succeeded:
        raise InvalidInput("Could not extract features of any utterance")
    return report.to_dict()


def _cmd_train_pr(args: argparse.Namespace, config: PipelineConfig):
    manifest, store = _data(args, config)
    checkpoints = _checkpoints(args, config)
    hyper = _hyper(args, config, "recognizer")
    ckpt = _resume(args, checkpoints, "recognizer")
    if ckpt is not None:
        ckpt.require_features(config.features)
        model, start = phoneme_recognizer.from_checkpoint(ckpt), ckpt.step
    else:
        model, start = phoneme_recognizer.build_pr_model(config.recognizer, hyper.seed), 0
    model.to(_shared.select_device())
    result = phoneme_recognizer.train_pr(model, manifest, store, hyper, start_step=start)
    checkpoint_id = checkpoints.save(
        phoneme_recognizer.to_checkpoint(result.model, config.features, result.step)
    )
    return {
        "checkpoint_id": checkpoint_id,
        "step": result.step,
        "loss": result.loss_history[-1] if result.loss_history else None,
        "skipped": result.skipped,
    }


def _load_recognizer(checkpoints: CheckpointSet, config: PipelineConfig):
    ckpt = checkpoints.recognizer
    ckpt.require_features(config.features)
    return phoneme_recognizer.from_checkpoint(ckpt).to(_shared.select_device())


def _load_synthesizer(checkpoints: CheckpointSet, config: PipelineConfig):
    ckpt = checkpoints.synthesizer
    ckpt.require_features(config.features)
    return synthesizer.from_checkpoint(ckpt).to(_shared.select_device())


def _cmd_train_syn(args: argparse.Namespace, config: PipelineConfig):
    manifest, store = _data(args, config)
    checkpoints = _checkpoints(args, config)
    hyper = _hyper(args, config, "synthesizer")
    pr = _load_recognizer(checkpoints, config)
    ckpt = _resume(args, checkpoints, "synthesizer")
    if ckpt is not None:
        ckpt.require_features(config.features)
        model = synthesizer.from_checkpoint(ckpt)
        start = int(ckpt.extra.get("schedule_step", ckpt.step))
        step = ckpt.step
    else:
        model = synthesizer.build_synthesizer(config.synthesizer, hyper.seed)
        start = step = 0
    model.to(_shared.select_device())
    schedule = config.synthesizer.schedule(start + hyper.steps)
    result = synthesizer.train_synthesizer(
        model, pr, manifest, store, hyper, schedule=schedule, start_step=start
    )
    checkpoint_id = checkpoints.save(
        synthesizer.to_checkpoint(
            result.model, config.features, step + hyper.steps, schedule_step=result.step
        )
    )

    first = manifest.utt_ids[0]
    alignment = synthesizer.attention_alignment(
        result.model, phoneme_recognizer.extract_ppg(pr, store.read_mel(first))
    )
    monotonicity = synthesizer.attention_monotonicity(alignment)
    if args.debug_dir is not None:
        visualization.write_image(
            os.path.join(args.debug_dir, f"alignment_{first}.png"),
            visualization.alignment_image(alignment),
        )
    return {
        "checkpoint_id": checkpoint_id,
        "step": step + hyper.steps,
        "loss": result.loss_history[-1] if result.loss_history else None,
        "mel_l1": result.mel_history[-1] if result.mel_history else None,
        "attention_monotonicity": monotonicity,
    }


def _cmd_gen_smspec(args: argparse.Namespace, config: PipelineConfig):
    manifest, store = _data(args, config)
    checkpoints = _checkpoints(args, config)
    pr = _load_recognizer(checkpoints, config)
    syn = _load_synthesizer(checkpoints, config)
    provenance = checkpoints.checkpoint_id("synthesizer")
    report = speech_enhancer.generate_smspec_corpus(pr, syn, manifest, store, provenance)
    return {"provenance": provenance, **report.to_dict()}


def _cmd_train_se(args: argparse.Namespace, config: PipelineConfig):
    manifest, store = _data(args, config)
    checkpoints = _checkpoints(args, config)
    hyper = _hyper(args, config, "taco_se")
    pr = _load_recognizer(checkpoints, config)
    provenance = checkpoints.checkpoint_id("synthesizer")
    ckpt = _resume(args, checkpoints, "taco_se")
    if ckpt is not None:
        ckpt.require_features(config.features)
        model = speech_enhancer.from_checkpoint(ckpt, pr)
        start = int(ckpt.extra.get("schedule_step", ckpt.step))
    else:
        model = speech_enhancer.build_taco_se(pr, _load_synthesizer(checkpoints, config))
        start = 0
    model.to(_shared.select_device())
    result = speech_enhancer.train_taco_se(
        model,
        manifest,
        store,
        hyper,
        provenance=provenance,
        schedule=model.config.schedule(start + hyper.steps),
        start_step=start,
    )
    checkpoint_id = checkpoints.save(
        speech_enhancer.to_checkpoint(
            result.model,
            config.features,
            result.step,
            recognizer_id=checkpoints.checkpoint_id("recognizer"),
        )
    )
    return {
        "checkpoint_id": checkpoint_id,
        "step": result.step,
        "loss": result.loss_history[-1] if result.loss_history else None,
        "identity_fraction": result.identity_fraction,
        "provenance": provenance,
    }


def _cmd_train_vocoder(args: argparse.Namespace, config: PipelineConfig):
    manifest, store = _data(args, config)
    checkpoints = _checkpoints(args, config)
    hyper = _hyper(args, config, "vocoder")
    ckpt = _resume(args, checkpoints, "vocoder")
    if ckpt is not None:
        ckpt.require_features(config.features)
        model, start = vocoder.from_checkpoint(ckpt), ckpt.step
    else:
        model, start = vocoder.build_vocoder(config.vocoder, hyper.seed), 0
    model.to(_shared.select_device())

    conditioning = None
    if args.condition_on_enhanced:
        pr = _load_recognizer(checkpoints, config)
        taco_se = speech_enhancer.from_checkpoint(checkpoints.taco_se, pr)
        conditioning = lambda m: speech_enhancer.enhance(taco_se, m)  # noqa: E731
    result = vocoder.train_vocoder(
        model, manifest, store, hyper, start_step=start, conditioning=conditioning
    )
    checkpoint_id = checkpoints.save(
        vocoder.to_checkpoint(result.model, config.features, result.step)
    )
    return {
        "checkpoint_id": checkpoint_id,
        "step": result.step,
        "loss": result.loss_history[-1] if result.loss_history else None,
        "receptive_field": vocoder.receptive_field(config.vocoder),
    }


def _cmd_adapt(args: argparse.Namespace, config: PipelineConfig):
    manifest, store = _data(args, config)
    base = _checkpoints(args, config)
    plan = AdaptationPlan.from_config(
        manifest,
        config,
        synthesizer_steps=args.synthesizer_steps,
        taco_se_steps=args.taco_se_steps,
        vocoder_steps=args.vocoder_steps,
        vocoder_condition_on_enhanced=args.condition_on_enhanced or None,
    )
    ids = adapt(base, CheckpointSet(args.out_checkpoint_root), plan, store, config)
    return {"checkpoint_ids": ids, "plan": plan.to_dict()}


def _pipeline(args: argparse.Namespace, config: PipelineConfig) -> ConversionPipeline:
    conversion = config.conversion
    if args.generation_mode is not None:
        conversion = replace(conversion, generation_mode=args.generation_mode)
    config = replace(config, conversion=replace(conversion, generation_seed=args.seed))
    return ConversionPipeline(
        _checkpoints(args, config), config, not args.no_enhance, args.vocoder
    )


def _cmd_convert(args: argparse.Namespace, config: PipelineConfig):
    pipeline = _pipeline(args, config)
    result = pipeline.convert_file(args.source, args.output, args.debug_dir)
    return {
        "output": args.output,
        "frames": result.source.n_frames,
        "samples": len(result.waveform),
        "checkpoint_ids": pipeline.checkpoint_ids,
    }


def _cmd_convert_batch(args: argparse.Namespace, config: PipelineConfig):
    manifest = DatasetManifest.from_jsonl(args.manifest)
    manifest.require_non_empty()
    pipeline = _pipeline(args, config)
    report = convert_batch(pipeline, manifest, args.out_dir, args.target_speaker, args.debug_dir)
    return {"out_dir": args.out_dir, **report.to_dict()}


def _read_transcripts(path: str) -> Dict[str, PhonemeSequence]:
    transcripts = {}
    for i, record in enumerate(_io.read_jsonl(path), start=1):
        if "utt_id" not in record or "transcript" not in record:
            raise InvalidInput(f"{path}:{i}: needs utt_id and transcript")
        transcripts[str(record["utt_id"])] = PhonemeSequence.from_transcript(
            record["transcript"] or ""
        )
    return transcripts


def _cmd_eval_per(args: argparse.Namespace, config: PipelineConfig):
    if args.ref is not None:
        references = _read_transcripts(args.ref)
        if args.hyp is None:
            raise InvalidInput("--ref needs --hyp")
        hypotheses = _read_transcripts(args.hyp)
    else:
        if args.manifest is None or args.feature_dir is None:
            raise InvalidInput("Pass --ref and --hyp, or --manifest and --feature-dir")
        manifest, store = _data(args, config)
        manifest.require_transcripts()
        pr = _load_recognizer(_checkpoints(args, config), config)
        references, hypotheses = {}, {}
        for record in manifest:
            references[record.utt_id] = PhonemeSequence.from_transcript(record.transcript)
            ppg = phoneme_recognizer.extract_ppg(pr, store.read_mel(record.utt_id))
            hypotheses[record.utt_id] = phoneme_recognizer.greedy_decode(ppg)
        if args.write_hyp is not None:
            with _io.atomic_open(args.write_hyp, "w") as f:
                for utt_id, hyp in hypotheses.items():
                    f.write(json.dumps({"utt_id": utt_id, "transcript": str(hyp)}) + "\n")

    missing = sorted(set(references) - set(hypotheses))
    if missing:
        raise InvalidInput(f"No hypothesis for {len(missing)} utterances, e.g. {missing[0]}")
    utt_ids = sorted(references)
    rate = phoneme_recognizer.corpus_per(
        [references[u] for u in utt_ids], [hypotheses[u] for u in utt_ids]
    )
    logger.info(f"PER {rate:.4f} over {len(utt_ids)} utterances")
    return rate


def _cmd_eval_se(args: argparse.Namespace, config: PipelineConfig):
    manifest, store = _data(args, config)
    checkpoints = _checkpoints(args, config)
    pr = _load_recognizer(checkpoints, config)
    checkpoints.require_same_features(["recognizer", "taco_se"], config.features)
    model = speech_enhancer.from_checkpoint(checkpoints.taco_se, pr)
    model.to(_shared.select_device())
    provenance = checkpoints.checkpoint_id("synthesizer") if checkpoints.exists("synthesizer") else None
    return speech_enhancer.evaluate_enhancement(model, manifest, store, provenance).to_dict()


def _cmd_inspect(args: argparse.Namespace, config: PipelineConfig):
    ckpt = load_checkpoint(args.checkpoint)
    summary: Dict[str, Any] = {
        "kind": ckpt.kind,
        "checkpoint_id": ckpt.checkpoint_id,
        "step": ckpt.step,
        "feature_hash": ckpt.feature_hash,
        "extra": ckpt.extra,
        "parameters": int(sum(t.size for t in ckpt.tensors.values())),
    }
    if args.verbose:
        summary["config"] = ckpt.config
        summary["features"] = ckpt.features
    return summary


def _common_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group("common options")
    group.add_argument(
        "--preset", choices=["desk", "paper"], default="desk", help="Parameter preset"
    )
    group.add_argument("--config", help="YAML file overlaid on the preset")
    group.add_argument("--seed", type=int, help="Seed of every random stream")
    group.add_argument(
        "--checkpoint-root",
        help=f"Checkpoint directory, defaults to ${constants.ENV_CHECKPOINT_ROOT}",
    )
    group.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )
    group.add_argument("--quiet", action="store_true", help="No progress bars")
    group.add_argument("--profile", action="store_true", help="Log cProfile statistics")
    return parser


def _data_parser(required: bool = True) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--manifest", required=required, help="JSON lines manifest")
    parser.add_argument("--feature-dir", required=required, help="Feature store directory")
    return parser


def _train_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--steps", type=int, help="Training steps")
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--learning-rate", type=float)
    parser.add_argument(
        "--resume", action="store_true", help="Continue from the existing checkpoint"
    )
    return parser


def _conversion_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument(
        "--no-enhance", action="store_true", help="Skip the enhancement network"
    )
    parser.add_argument("--vocoder", choices=["wavenet", "griffinlim"], default="wavenet")
    parser.add_argument(
        "--generation-mode", choices=[m.value for m in constants.GenerationMode]
    )
    parser.add_argument("--debug-dir", help="Write spectrogram images here")
    return parser


def build_parser() -> argparse.ArgumentParser:
    """Returns the argument parser of the ``tacovc`` command"""
    common = _common_parser()
    data = _data_parser()
    train = _train_parser()
    conversion = _conversion_parser()

    parser = argparse.ArgumentParser(
        prog=constants.PACKAGE_NAME,
        description="PPG based voice conversion with spectrogram enhancement",
    )
    verbs = parser.add_subparsers(dest="verb", metavar="VERB", required=True)

    def verb(name: str, handler: Handler, help: str, parents: Sequence = ()):
        sub = verbs.add_parser(name, help=help, parents=[common, *parents])
        sub.set_defaults(handler=handler)
        return sub

    sub = verb("make-toy-corpus", _cmd_make_toy_corpus, "Synthesize a toy corpus")
    sub.add_argument("--out-dir", required=True)
    sub.add_argument("--utterances", type=int, default=10, help="Utterances per speaker")
    sub.add_argument("--speakers", nargs="+", default=["A"])

    sub = verb("features", _cmd_features, "Extract mel and linear spectrograms", [data])
    sub.add_argument("--overwrite", action="store_true")

    verb("train-pr", _cmd_train_pr, "Train the phoneme recognizer", [data, train])
    sub = verb("train-syn", _cmd_train_syn, "Train the synthesizer", [data, train])
    sub.add_argument("--debug-dir", help="Write the attention alignment image here")
    verb("gen-smspec", _cmd_gen_smspec, "Synthesize the corpus spectrograms", [data])
    verb("train-se", _cmd_train_se, "Train the enhancement network", [data, train])
    sub = verb("train-vocoder", _cmd_train_vocoder, "Train the vocoder", [data, train])
    sub.add_argument("--condition-on-enhanced", action="store_true")

    sub = verb("adapt", _cmd_adapt, "Adapt the checkpoints to a new target speaker", [data])
    sub.add_argument("--out-checkpoint-root", required=True)
    sub.add_argument("--synthesizer-steps", type=int)
    sub.add_argument("--taco-se-steps", type=int)
    sub.add_argument("--vocoder-steps", type=int)
    sub.add_argument("--condition-on-enhanced", action="store_true")

    sub = verb("convert", _cmd_convert, "Convert one WAV file", [conversion])
    sub.add_argument("source", help="Source WAV file")
    sub.add_argument("--output", required=True, help="Output WAV file")

    sub = verb(
        "convert-batch", _cmd_convert_batch, "Convert every manifest utterance", [conversion]
    )
    sub.add_argument("--manifest", required=True)
    sub.add_argument("--out-dir", required=True)
    sub.add_argument("--target-speaker", default="target")

    sub = verb(
        "eval-per", _cmd_eval_per, "Phoneme error rate", [_data_parser(required=False)]
    )
    sub.add_argument("--ref", help="Reference transcripts (JSON lines)")
    sub.add_argument("--hyp", help="Hypothesis transcripts (JSON lines)")
    sub.add_argument("--write-hyp", help="Write decoded hypotheses here")

    verb("eval-se", _cmd_eval_se, "Score the enhancement network", [data])

    sub = verb("inspect", _cmd_inspect, "Describe a checkpoint")
    sub.add_argument("checkpoint")
    sub.add_argument("--verbose", action="store_true")
    return parser


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig.from_preset(args.preset, args.config)
    if args.seed is None:
        args.seed = config.seed
    hypers = {kind: replace(h, seed=args.seed) for kind, h in config.hypers.items()}
    return replace(config, seed=args.seed, hypers=hypers)


def _print(result: Any) -> None:
    if isinstance(result, float):
        print(result)
    else:
        print(json.dumps(result, sort_keys=True, default=str))


def _run(handler: Handler, args: argparse.Namespace, config: PipelineConfig) -> Any:
    if not args.profile:
        return handler(args, config)
    profile = cProfile.Profile()
    profile.enable()
    try:
        return handler(args, config)
    finally:
        profile.disable()
        s = io.StringIO()
        stats = pstats.Stats(profile, stream=s).sort_stats(pstats.SortKey.TIME)
        stats.print_stats(20)
        logger.info(s.getvalue())


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point of the ``tacovc`` console script

    :return: Process exit code
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else 0

    logging.basicConfig(
        level=logging.WARNING if args.quiet else getattr(logging, args.log_level),
        format=LOG_FORMAT,
        datefmt=LOG_DATE_FORMAT,
    )
    _shared.set_progress_enabled(not args.quiet)

    try:
        config = _load_config(args)
        _print(_run(args.handler, args, config))
    except TacoVCError as e:
        logger.debug(f"{args.verb} failed", exc_info=True)
        print(json.dumps(e.as_dict()), file=sys.stderr)
        return EXIT_ERROR
    except Exception as e:  # noqa: BLE001
        logger.exception(f"Unexpected error in {args.verb}")
        print(json.dumps({"error": "InternalError", "message": str(e)}), file=sys.stderr)
        return EXIT_UNEXPECTED
    return 0
