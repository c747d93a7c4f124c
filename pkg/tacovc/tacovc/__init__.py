"""Voice conversion from phonetic posteriorgrams with a spectrogram enhancement
network trained on the synthesizer's own output

Networks are defined in :mod:`.core`, the toy corpus, adaptation and
visualization helpers in :mod:`.extensions`. End-to-end conversion lives in
:mod:`.pipeline` and the ``tacovc`` console script in :mod:`.cli`.
"""
import sys

from .checkpoint import CheckpointSet, ModelCheckpoint, load_checkpoint
from .cli import main as _main
from .config import PipelineConfig
from .corpus import DatasetManifest, FeatureStore
from .errors import TacoVCError
from .pipeline import ConversionPipeline, convert_batch


def main():
    """Entry point of the ``tacovc`` console script"""
    sys.exit(_main())


__all__ = [
    "CheckpointSet",
    "ConversionPipeline",
    "DatasetManifest",
    "FeatureStore",
    "ModelCheckpoint",
    "PipelineConfig",
    "TacoVCError",
    "convert_batch",
    "load_checkpoint",
    "main",
]
