"""Attention-augmented variational autoencoder for multivariate
time-series anomaly detection.

The package layers as follows: ``autodiff`` provides dense-tensor
reverse-mode differentiation, ``nn`` the recurrent and attention building
blocks, ``model`` the sequence autoencoder itself, ``training`` the
annealed optimization loop, ``data`` and ``synth`` the signal pipeline and
the synthetic test-bench generator, ``detect`` the sliding-window scoring
path, ``evaluate`` the sequence-level metrics, and ``cli`` the command
line front end.
"""

from .autodiff import Tensor, backward, no_grad
from .data import NormStats, Sequence, apply_norm, fit_norm, make_windows
from .detect import DetectionReport, detect, estimate_threshold, reverse_window, score
from .errors import ConfigError, ContractError, DataError, DimensionError
from .evaluate import auprc, best_f1, confusion, pr_curve, precision_recall_f1
from .model import Model, ModelConfig, forward_infer, forward_train, init_model, load_model, save_model
from .seeding import substream
from .synth import SynthConfig, make_dataset
from .training import AmsGrad, TrainConfig, beta_at_epoch, loss_terms, train

__version__ = "0.1.0"

__all__ = [
    "AmsGrad",
    "ConfigError",
    "ContractError",
    "DataError",
    "DetectionReport",
    "DimensionError",
    "Model",
    "ModelConfig",
    "NormStats",
    "Sequence",
    "SynthConfig",
    "Tensor",
    "TrainConfig",
    "apply_norm",
    "auprc",
    "backward",
    "best_f1",
    "beta_at_epoch",
    "confusion",
    "detect",
    "estimate_threshold",
    "fit_norm",
    "forward_infer",
    "forward_train",
    "init_model",
    "load_model",
    "loss_terms",
    "make_dataset",
    "make_windows",
    "no_grad",
    "pr_curve",
    "precision_recall_f1",
    "reverse_window",
    "save_model",
    "score",
    "substream",
    "train",
]
