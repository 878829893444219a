"""Parameters, Adam updates, and Xavier initialization."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidArgumentError
from .tensor import Tensor


class Parameter:
    """A trainable tensor plus its Adam moment buffers and step counter."""

    def __init__(self, name: str, tensor: Tensor):
        tensor.requires_grad = True
        self.name = name
        self.tensor = tensor
        self.m = np.zeros_like(tensor.data)
        self.v = np.zeros_like(tensor.data)
        self.step_count = 0

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    def freeze(self):
        self.tensor.requires_grad = False

    def __repr__(self):
        return "Parameter(%r, shape=%r)" % (self.name, self.tensor.shape)


def zero_grads(params):
    for p in params:
        p.tensor.grad = None


def adam_step(params, learning_rate: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update per parameter with a populated gradient.

    delta = -lr * mhat / (sqrt(vhat) + eps); gradients are left untouched so
    the caller decides when to reset them.
    """
    if learning_rate <= 0.0:
        raise InvalidArgumentError("learning_rate must be positive, got %r" % (learning_rate,))
    for p in params:
        g = p.tensor.grad
        if g is None or not p.tensor.requires_grad:
            continue
        p.step_count += 1
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * (g * g)
        m_hat = p.m / (1.0 - beta1**p.step_count)
        v_hat = p.v / (1.0 - beta2**p.step_count)
        p.tensor.data = p.data - learning_rate * m_hat / (np.sqrt(v_hat) + eps)


def xavier_init(fan_in: int, fan_out: int, rng_seed, shape=None) -> Tensor:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).

    rng_seed may be an int seed or a numpy Generator (drawn in place, which
    keeps multi-parameter model initialization on one seeded stream).
    Default shape is (fan_out, fan_in).
    """
    if fan_in <= 0 or fan_out <= 0:
        raise InvalidArgumentError(
            "fans must be positive, got fan_in=%r fan_out=%r" % (fan_in, fan_out)
        )
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    a = np.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_out, fan_in)
    return Tensor(rng.uniform(-a, a, size=shape), requires_grad=True)
