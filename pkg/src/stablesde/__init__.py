"""Stable neural stochastic differential equations for irregular time series.

Three provably stable model classes (Langevin-type, linear-noise, geometric)
with controlled paths, a from-scratch reverse-mode autodiff engine, seeded
Euler-Maruyama / Milstein solvers, a training loop, and a stability and
robustness experiment suite.
"""

from .autodiff import Tensor, grad_check, lipschitz_upper_bound, no_grad
from .data import CorruptionSpec, Dataset, inject_missing, load_csv, save_csv, synth
from .errors import (AbortNonFinite, EmptyChannel, NegativeStateGSDE,
                     NumericalExplosion, StableSdeError, TooFewKnots)
from .models import (MODEL_KINDS, ModelConfig, SdeModel, build_model,
                     load_checkpoint, save_checkpoint, time_encoding)
from .paths import ControlledPath, IrregularSeries, build_path, eval_path
from .solvers import BrownianGrid, SolveConfig, Trajectory, sample_brownian, solve
from .training import TrainConfig, derive_seed, evaluate, split, train

__version__ = "0.1.0"

__all__ = [
    "Tensor", "grad_check", "lipschitz_upper_bound", "no_grad",
    "CorruptionSpec", "Dataset", "inject_missing", "load_csv", "save_csv",
    "synth", "AbortNonFinite", "EmptyChannel", "NegativeStateGSDE",
    "NumericalExplosion", "StableSdeError", "TooFewKnots", "MODEL_KINDS",
    "ModelConfig", "SdeModel", "build_model", "load_checkpoint",
    "save_checkpoint", "time_encoding", "ControlledPath", "IrregularSeries",
    "build_path", "eval_path", "BrownianGrid", "SolveConfig", "Trajectory",
    "sample_brownian", "solve", "TrainConfig", "derive_seed", "evaluate",
    "split", "train", "__version__",
]
