from . import functional
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .functional import (
    ShapeError,
    bilstm_forward,
    conv1d_forward,
    linear_forward,
    log_softmax,
    maxpool1d_forward,
    softmax,
)
from .gradcheck import GradCheckResult, grad_check
from .layers import BiLSTM, Conv1d, Conv2d, Linear, Module
from .tape import NonFiniteError, Param, Tape, Var

__all__ = [
    "BiLSTM", "CheckpointError", "Conv1d", "Conv2d", "GradCheckResult", "Linear", "Module",
    "NonFiniteError", "Param", "ShapeError", "Tape", "Var", "bilstm_forward", "conv1d_forward",
    "functional", "grad_check", "linear_forward", "load_checkpoint", "log_softmax",
    "maxpool1d_forward", "save_checkpoint", "softmax",
]
