"""Minimal float64 autodiff kernel used by the response model."""

from .checkpoint import CheckpointError, load_into, read_checkpoint, save_checkpoint
from .gradcheck import GradReport, check_function, finite_diff_check
from .optim import ParamStore, adam_step
from .rng import ALGORITHM as RNG_ALGORITHM
from .rng import make_rng
from .tensor import Tensor, backward, lstm_cell, softmax

__all__ = [
    "CheckpointError",
    "GradReport",
    "ParamStore",
    "RNG_ALGORITHM",
    "Tensor",
    "adam_step",
    "backward",
    "check_function",
    "finite_diff_check",
    "load_into",
    "lstm_cell",
    "make_rng",
    "read_checkpoint",
    "save_checkpoint",
    "softmax",
]
