"""adapterlab: parameter-efficient cross-modal transfer with adapter modules
in a frozen transformer encoder, at desk scale."""

from .adapters import (AdapterConfig, AdapterStack, FreezeMode, PlacementPlan,
                       attach, trainable_parameters)
from .encoder import Encoder, EncoderConfig, PAPER_SCALE_CONFIG
from .tensor import ParameterSet, Tensor, backward, finite_difference_check
from .tokenizer import Vocabulary, apply_mlm_mask, train_bpe
from .training import TrainConfig, TrainReport, adam_step, pretrain_mlm

__version__ = "0.1.0"

__all__ = [
    "AdapterConfig", "AdapterStack", "FreezeMode", "PlacementPlan", "attach",
    "trainable_parameters", "Encoder", "EncoderConfig", "PAPER_SCALE_CONFIG",
    "ParameterSet", "Tensor", "backward", "finite_difference_check",
    "Vocabulary", "apply_mlm_mask", "train_bpe", "TrainConfig", "TrainReport",
    "adam_step", "pretrain_mlm",
]
