"""Minimal reverse-mode autodiff with 1D network kernels (float64)."""
from .tensor import (Tensor, add, as_tensor, concat, div, grad_enabled, linear, matmul, mul,
                     no_grad, relu, reshape, sigmoid, softmax, sub, tensor_mean, tensor_sum,
                     transpose)
from .functional import (avg_pool1d, bce_with_logits, conv1d, conv_output_length, flatten,
                         global_avg_pool1d, layer_norm, max_pool1d, positional_encoding,
                         scaled_dot_product_attention)
from .nn import (Conv1d, LayerNorm, Linear, Module, MultiHeadAttention, Parameter,
                 SqueezeExcitation, TransformerEncoderLayer)
from .optim import AdamW, NonFiniteGradient, adamw_step
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import check_gradients, numeric_gradient, relative_error

__all__ = [
    "Tensor", "add", "as_tensor", "concat", "div", "grad_enabled", "linear", "matmul", "mul",
    "no_grad", "relu", "reshape", "sigmoid", "softmax", "sub", "tensor_mean", "tensor_sum",
    "transpose", "avg_pool1d", "bce_with_logits", "conv1d", "conv_output_length", "flatten",
    "global_avg_pool1d", "layer_norm", "max_pool1d", "positional_encoding",
    "scaled_dot_product_attention", "Conv1d", "LayerNorm", "Linear", "Module",
    "MultiHeadAttention", "Parameter", "SqueezeExcitation", "TransformerEncoderLayer", "AdamW",
    "NonFiniteGradient", "adamw_step", "CheckpointError", "load_checkpoint", "save_checkpoint",
    "check_gradients", "numeric_gradient", "relative_error",
]
