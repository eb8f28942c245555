"""Dense-tensor numeric core: direct convolution, activations, tape, SGD.

Tensors are numpy arrays. Activations are N x C x H x W; conv kernels are
Kh x Kw x C_in/groups x C_out; dense weights are in x out.
"""

from .autograd import GradientTape, backward
from .conv import BACKEND, conv2d_backward_input, conv2d_backward_kernel, conv2d_forward
from .ops import affine_forward, dense_forward, prelu_forward, relu6_decay_forward
from .optim import cosine_lr, sgd_step

__all__ = [
    "BACKEND",
    "GradientTape",
    "affine_forward",
    "backward",
    "conv2d_backward_input",
    "conv2d_backward_kernel",
    "conv2d_forward",
    "cosine_lr",
    "dense_forward",
    "prelu_forward",
    "relu6_decay_forward",
    "sgd_step",
]
