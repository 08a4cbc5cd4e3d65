"""Small reverse-mode autodiff engine and neural building blocks."""

from . import functional
from .checkpoint import load_checkpoint, save_checkpoint
from .engine import Parameter, Tape, Tensor, debug_mode, make_op, set_debug
from .gradcheck import check_gradients, relative_error
from .layers import FFN, GRU, DilatedConv1d, LayerNorm, Linear, Module, PReLU
from .optim import Adam, clip_global_norm, global_norm

__all__ = [
    "Adam", "DilatedConv1d", "FFN", "GRU", "LayerNorm", "Linear", "Module", "PReLU",
    "Parameter", "Tape", "Tensor", "check_gradients", "clip_global_norm", "debug_mode",
    "functional", "global_norm", "load_checkpoint", "make_op", "relative_error",
    "save_checkpoint", "set_debug",
]
