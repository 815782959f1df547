"""Multi-resolution raw-waveform speaker embeddings on a small numpy autograd engine."""

from .config import RunConfig, load_run_config
from .errors import ConfigError, TrainingDiverged
from .evaluator import ScoreReport, eer, evaluate, min_dcf
from .model import (
    ModelConfig,
    assemble,
    count_params,
    embed_waveforms,
    load_checkpoint,
    save_checkpoint,
)
from .synth import synth_corpus
from .trainer import TrainConfig, train_loop

__all__ = [
    "ConfigError",
    "ModelConfig",
    "RunConfig",
    "ScoreReport",
    "TrainConfig",
    "TrainingDiverged",
    "assemble",
    "count_params",
    "eer",
    "embed_waveforms",
    "evaluate",
    "load_checkpoint",
    "load_run_config",
    "min_dcf",
    "save_checkpoint",
    "synth_corpus",
    "train_loop",
]
