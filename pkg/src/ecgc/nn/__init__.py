"""Minimal autodiff tensors, the residual encoder and the linear probe."""

from ecgc.nn.checkpoint import load_checkpoint, save_checkpoint
from ecgc.nn.encoder import Encoder, EncoderConfig, LinearProbe
from ecgc.nn.optim import SGD, Adam, AdamState, adam_step, make_optimizer
from ecgc.nn.tensor import Tensor, parameter

__all__ = [
    "Adam",
    "AdamState",
    "Encoder",
    "EncoderConfig",
    "LinearProbe",
    "SGD",
    "Tensor",
    "adam_step",
    "load_checkpoint",
    "make_optimizer",
    "parameter",
    "save_checkpoint",
]
