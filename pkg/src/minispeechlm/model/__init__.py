from .config import Interleave, ModelConfig
from .delay import delay_apply, delay_invert, delay_sequence
from .loss import NoSupervisionError, log_softmax, weighted_cross_entropy
from .train import (
    OptimConfig,
    TrainState,
    TrainingError,
    collate,
    load_checkpoint,
    loss_and_grads,
    lr_at,
    save_checkpoint,
    train_step,
)
from .transformer import DecodeCache, backward, count_params, forward, forward_rows, init_params

__all__ = [
    "DecodeCache",
    "Interleave",
    "ModelConfig",
    "NoSupervisionError",
    "OptimConfig",
    "TrainState",
    "TrainingError",
    "backward",
    "collate",
    "count_params",
    "delay_apply",
    "delay_invert",
    "delay_sequence",
    "forward",
    "forward_rows",
    "init_params",
    "load_checkpoint",
    "log_softmax",
    "loss_and_grads",
    "lr_at",
    "save_checkpoint",
    "train_step",
    "weighted_cross_entropy",
]
