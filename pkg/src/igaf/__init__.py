"""IGAF guided depth super-resolution on a small numpy autodiff engine."""

from .blocks import ModelConfig, ParamStore, count_params, init_params, model_forward
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetManifest, ManifestEntry, Sample, load_sample, synth_dataset
from .errors import CheckpointError, ConfigError, DataError, IGAFError, NumericalError, ShapeError, TapeError
from .gradcheck import grad_check
from .optim import AdamState, Schedule, adam_step, l1_loss, lr_at, rmse
from .resize import bicubic_resize
from .tensor import Tape, Tensor, backward
from .train import TrainConfig, ablate, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "DatasetManifest",
    "IGAFError",
    "ManifestEntry",
    "ModelConfig",
    "NumericalError",
    "ParamStore",
    "Sample",
    "Schedule",
    "ShapeError",
    "Tape",
    "TapeError",
    "Tensor",
    "TrainConfig",
    "ablate",
    "adam_step",
    "backward",
    "bicubic_resize",
    "count_params",
    "evaluate",
    "grad_check",
    "init_params",
    "l1_loss",
    "load_checkpoint",
    "load_sample",
    "lr_at",
    "model_forward",
    "rmse",
    "save_checkpoint",
    "synth_dataset",
    "train",
]
