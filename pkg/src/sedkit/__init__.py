"""Stuttering event detection: fbank front end, Conformer-BiLSTM multi-task model, training and evaluation."""

from .corpus import TASKS, ClipRecord, FeatureSet, SynthSpec, load_manifest, split_by_speaker, synth_generate
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    FormatError,
    NumericalError,
    ParseError,
    SedkitError,
    ShapeError,
)
from .estimator import FbankExtractor, StutterDetector
from .metrics import EvalReport, evaluate
from .network import Checkpoint, ConformerBiLSTM, ModelConfig, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "TASKS", "ClipRecord", "FeatureSet", "SynthSpec", "load_manifest", "split_by_speaker", "synth_generate",
    "ConfigError", "ContractError", "DataError", "FormatError", "NumericalError", "ParseError", "SedkitError",
    "ShapeError", "FbankExtractor", "StutterDetector", "EvalReport", "evaluate", "Checkpoint", "ConformerBiLSTM",
    "ModelConfig", "load_checkpoint", "save_checkpoint", "TrainConfig", "train", "__version__",
]
