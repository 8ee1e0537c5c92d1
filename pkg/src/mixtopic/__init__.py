"""Supervised multi-specialist Bayesian topic model for sparse diagnosis data."""

__version__ = "0.1.0"

from .corpus import Corpus, PatientRecord, Token, load_corpus, split_corpus, validate_corpus
from .inference import StochasticConfig, TrainConfig, train, train_stochastic
from .model import ModelState, TrainedModel, build_trained_model, init_state
from .probit import fold_in, predict_probability, truncated_normal_mean
from .simulate import SimConfig, simulate

__all__ = [
    "Corpus",
    "PatientRecord",
    "Token",
    "load_corpus",
    "split_corpus",
    "validate_corpus",
    "TrainConfig",
    "StochasticConfig",
    "train",
    "train_stochastic",
    "ModelState",
    "TrainedModel",
    "build_trained_model",
    "init_state",
    "fold_in",
    "predict_probability",
    "truncated_normal_mean",
    "SimConfig",
    "simulate",
    "__version__",
]
