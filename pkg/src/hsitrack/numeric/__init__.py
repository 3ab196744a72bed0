from .tape import (
    DTYPE, DimensionError, Tape, Var, absolute, add, concat, div, gelu, layer_norm,
    linear_apply, log, matmul, maximum, mean, minimum, mul, param, relu, reshape, sigmoid,
    softmax, softplus, square, sub, sum_, take, transpose,
)
from .attention import (
    ConfigError, attention_block, cross_attention_block, init_block, multi_head_attention,
    window_mask,
)
from .gradcheck import GradCheckError, GradCheckReport, grad_check
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint

__all__ = [name for name in dir() if not name.startswith("_")]
