from .gradcheck import GradCheckReport, grad_check
from .ops import (
    add,
    batchnorm2d,
    conv2d,
    conv2d_backward,
    conv_output_size,
    global_pool,
    leaky_relu,
    linear,
    sigmoid,
    sigmoid_bce,
    softmax,
    softmax_cross_entropy,
    swap_channels_freq,
    weighted_sum,
)
from .optim import AdamState, adam_step
from .tensor import Tensor

__all__ = [
    "AdamState",
    "GradCheckReport",
    "Tensor",
    "adam_step",
    "add",
    "batchnorm2d",
    "conv2d",
    "conv2d_backward",
    "conv_output_size",
    "global_pool",
    "grad_check",
    "leaky_relu",
    "linear",
    "sigmoid",
    "sigmoid_bce",
    "softmax",
    "softmax_cross_entropy",
    "swap_channels_freq",
    "weighted_sum",
]
