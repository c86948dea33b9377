"""BiERU: bidirectional emotional recurrent units for sentiment in conversations."""

__version__ = "0.1.0"

from .bieru import BieruModel, ModelConfig, bieru_backward, bieru_forward, init_model
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, FeatureConversation, load_dataset, synth_dataset, write_dataset
from .gntb import GntbConfig, gntb_backward, gntb_forward
from .tfe import TfeConfig, tfe_backward, tfe_forward
from .train import TrainConfig, TrainState, evaluate, train_stream

__all__ = [
    "BieruModel",
    "ModelConfig",
    "bieru_forward",
    "bieru_backward",
    "init_model",
    "GntbConfig",
    "gntb_forward",
    "gntb_backward",
    "TfeConfig",
    "tfe_forward",
    "tfe_backward",
    "Dataset",
    "FeatureConversation",
    "load_dataset",
    "write_dataset",
    "synth_dataset",
    "TrainConfig",
    "TrainState",
    "train_stream",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
]
