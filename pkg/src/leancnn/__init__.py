"""leancnn: a dependency-light CNN training and inference engine.

Implements two small convolutional classifiers (a binary and a multi-class
variant for brain-MRI tumor images) end to end on numpy: im2col convolution
kernels with an optional numba backend, hand-derived backpropagation, Adam,
a deterministic data pipeline, metrics, a few-shot protocol, latency
benchmarks, and a CLI (`leancnn`).
"""

__version__ = "0.1.0"

from .backend import active_name as active_backend, set_backend
from .checkpoint import load as load_checkpoint, save as save_checkpoint
from .errors import (ConfigError, DataError, DivergenceError, EngineError,
                     FormatError, ShapeError, ValidationError)
from .models import ModelSpec, build, param_count_formula
# note: the `train` function is deliberately not re-exported at package level
# so that `leancnn.train` stays bound to the submodule; call it as
# leancnn.train.train(...) or import it from leancnn.train directly
from .train import (TrainConfig, evaluate, few_shot_experiment, fit, lr_sweep,
                    train as run_training)

__all__ = [
    "__version__",
    "active_backend", "set_backend",
    "load_checkpoint", "save_checkpoint",
    "EngineError", "ShapeError", "ConfigError", "ValidationError",
    "DataError", "FormatError", "DivergenceError",
    "ModelSpec", "build", "param_count_formula",
    "TrainConfig", "run_training", "fit", "evaluate", "lr_sweep",
    "few_shot_experiment",
]
