"""Autodiff engine, layers, optimizer, and gradient checking."""

from .gradcheck import GradCheckReport, grad_check
from .layers import (
    BatchNorm,
    GruParams,
    activation,
    batchnorm_forward,
    bce_loss,
    bigru_forward,
    bigru_scan,
    conv2d_forward,
    dense_forward,
    dropout,
    masked_softmax,
)
from .optim import Parameter, adam_step, xavier_init, zero_grads
from .tensor import Tensor

__all__ = [
    "BatchNorm",
    "GradCheckReport",
    "GruParams",
    "Parameter",
    "Tensor",
    "activation",
    "adam_step",
    "batchnorm_forward",
    "bce_loss",
    "bigru_forward",
    "bigru_scan",
    "conv2d_forward",
    "dense_forward",
    "dropout",
    "grad_check",
    "masked_softmax",
    "xavier_init",
    "zero_grads",
]
