from . import ops
from .core import (
    NEG_SENTINEL,
    ContractError,
    GradMap,
    GradTape,
    NonFiniteError,
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    make_op,
)
from .gradcheck import grad_check, relative_error
from .nn import ConfigError, causal_mask, feed_forward, multi_head_attention
from .ops import layer_norm, linear, softmax
from .optim import AdamState, ParameterStore, adam_step

__all__ = [
    "NEG_SENTINEL", "AdamState", "ConfigError", "ContractError", "GradMap", "GradTape",
    "NonFiniteError", "ParameterStore", "ShapeError", "Tensor", "adam_step", "as_tensor",
    "backward", "causal_mask", "feed_forward", "grad_check", "layer_norm", "linear",
    "make_op", "multi_head_attention", "ops", "relative_error", "softmax",
]
