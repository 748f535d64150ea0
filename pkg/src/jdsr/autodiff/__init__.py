"""Minimal dense tensors with reverse-mode automatic differentiation."""

from . import functional
from .functional import (abs, add, batch_norm, clamp, concat_channels, conv2d, div, exp, flatten,
                         getitem, global_avg_pool, leaky_relu, log, matmul, max_pool2d, mean, mul,
                         neg, pixel_shuffle, pixel_unshuffle, pow, relu, reshape, scale_channels,
                         sigmoid, sqrt, square, sub, sum)
from .gradcheck import check_gradients, finite_difference_grad, relative_error
from .tensor import (DimensionError, DomainError, Node, NumericalError, Tape, Tensor, as_tensor,
                     backward, get_default_dtype, is_grad_enabled, no_grad, set_default_dtype)
