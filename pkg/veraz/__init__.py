"""Veraz - Self-training fake news detection with an LSTM and self-attention."""

__version__ = "0.1.0"

from .config import RunConfig, config, load_config
from .dataset import NewsRecord, load_records, make_folds, split
from .errors import (
    ConfigError, ContractError, CorpusError, DimensionError, LeakageError,
    SentimentLookupError, VerazError
)
from .model import HybridNewsModel, ModelConfig, load_checkpoint, save_checkpoint
from .selftrain import SelfTrainConfig, SelfTrainer, run_self_training, verify_run_log

__all__ = [
    "RunConfig",
    "config",
    "load_config",
    "NewsRecord",
    "load_records",
    "make_folds",
    "split",
    "HybridNewsModel",
    "ModelConfig",
    "load_checkpoint",
    "save_checkpoint",
    "SelfTrainConfig",
    "SelfTrainer",
    "run_self_training",
    "verify_run_log",
    "VerazError",
    "ConfigError",
    "ContractError",
    "CorpusError",
    "DimensionError",
    "LeakageError",
    "SentimentLookupError",
]
