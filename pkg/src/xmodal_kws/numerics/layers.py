"""Neural layers composed from the autodiff primitives.

Shape conventions: sequences are time-major (T, B, F); images are (B, C, T, F)
with time on the height axis. Masks are plain numpy bool arrays where True
marks a real (unmasked) position; padding is always a suffix.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidArgumentError, ShapeError
from . import tensor as tz
from .tensor import Tensor

# ---- Dense ----


def dense_forward(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """y = W @ x + b. x (in,) or (B, in); W (out, in); b (out,)."""
    x = tz._as_tensor(x)
    if weight.ndim != 2:
        raise ShapeError("dense weight must be 2-D, got %r" % (weight.shape,))
    if x.ndim == 1:
        if x.shape[0] != weight.shape[1]:
            raise ShapeError(
                "dense input width %d != weight fan-in %d" % (x.shape[0], weight.shape[1])
            )
        return tz.reshape(tz.matmul(weight, tz.reshape(x, (-1, 1))), (-1,)) + bias
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(
            "dense input width %d != weight fan-in %d" % (x.shape[-1], weight.shape[1])
        )
    return tz.matmul(x, tz.permute(weight, (1, 0))) + bias


# ---- Activations ----


def activation(x: Tensor, kind: str, alpha: float = 0.01) -> Tensor:
    if kind == "leaky_relu":
        return tz.leaky_relu(x, alpha)
    if kind == "sigmoid":
        return tz.sigmoid(x)
    if kind == "tanh":
        return tz.tanh(x)
    raise InvalidArgumentError("unknown activation kind %r" % (kind,))


# ---- Convolution ----


def _same_pad(k: int) -> tuple:
    # total k-1 regardless of length: window count floor((n+k-1-k)/s)+1
    # = ceil(n/s), and alignment never depends on how far a row was padded
    return (k - 1) // 2, k - 1 - (k - 1) // 2


def conv2d_forward(x: Tensor, kernels: Tensor, bias: Tensor, stride_time: int = 1) -> Tensor:
    """3x3 'same' convolution. x (C_in,T,F) or (B,C_in,T,F) -> same rank out.

    Stride applies to the time axis only; T' = ceil(T / stride_time).
    """
    x = tz._as_tensor(x)
    single = x.ndim == 3
    if single:
        x = tz.reshape(x, (1,) + x.shape)
    if x.ndim != 4:
        raise ShapeError("conv2d input must be (C,T,F) or (B,C,T,F), got %r" % (x.shape,))
    if x.size == 0:
        raise InvalidArgumentError("conv2d input is empty")
    c_out, c_in, kh, kw = kernels.shape
    if c_in != x.shape[1]:
        raise ShapeError("conv2d channels %d != kernel fan-in %d" % (x.shape[1], c_in))

    pt = _same_pad(kh)
    pf = _same_pad(kw)
    xp = tz.pad(x, ((0, 0), (0, 0), pt, pf))
    patches = tz.extract_patches(xp, kh, kw, stride_time, 1)  # (B,T',F,C_in*kh*kw)
    w_mat = tz.permute(tz.reshape(kernels, (c_out, c_in * kh * kw)), (1, 0))
    out = tz.matmul(patches, w_mat) + bias  # (B,T',F,C_out)
    out = tz.permute(out, (0, 3, 1, 2))
    return tz.reshape(out, out.shape[1:]) if single else out


# ---- Batch normalization ----


class BatchNorm:
    """Per-channel normalization over batch x time x frequency.

    Training uses batch statistics (biased variance) and updates running
    statistics with the given momentum; eval uses the running statistics.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        if x.ndim != 4:
            raise ShapeError("batchnorm expects (B,C,T,F), got %r" % (x.shape,))
        c = self.gamma.shape[0]
        if x.shape[1] != c:
            raise ShapeError("batchnorm channels %d != %d" % (x.shape[1], c))
        shape = (1, c, 1, 1)
        if mode == "train":
            if x.shape[0] < 2:
                raise InvalidArgumentError("batchnorm train mode needs batch size >= 2")
            mu = tz.mean(x, axis=(0, 2, 3), keepdims=True)
            var = tz.mean((x - mu) ** 2.0, axis=(0, 2, 3), keepdims=True)
            self.running_mean = (
                (1.0 - self.momentum) * self.running_mean
                + self.momentum * mu.data.reshape(c)
            )
            self.running_var = (
                (1.0 - self.momentum) * self.running_var
                + self.momentum * var.data.reshape(c)
            )
            inv = (var + self.eps) ** -0.5
            xhat = (x - mu) * inv
        elif mode == "eval":
            mu = self.running_mean.reshape(shape)
            inv = 1.0 / np.sqrt(self.running_var.reshape(shape) + self.eps)
            xhat = (x - mu) * inv
        else:
            raise InvalidArgumentError("batchnorm mode must be 'train' or 'eval', got %r" % (mode,))
        return xhat * tz.reshape(self.gamma, shape) + tz.reshape(self.beta, shape)


def batchnorm_forward(x: Tensor, gamma: Tensor, beta: Tensor, mode: str,
                      eps: float = 1e-5) -> Tensor:
    """Stateless batchnorm on externally supplied gamma/beta (train-mode math)."""
    bn = BatchNorm(gamma.shape[0], eps=eps)
    bn.gamma, bn.beta = gamma, beta
    return bn(x, mode)


# ---- Masked softmax ----


def masked_softmax(logits: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to mask==True positions.

    Masked positions come out exactly 0; each row of unmasked weights sums
    to 1 up to float rounding. A fully masked row is an error.
    """
    logits = tz._as_tensor(logits)
    m = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    if not m.any(axis=-1).all():
        raise InvalidArgumentError("masked_softmax: some row is fully masked")
    row_max = np.max(np.where(m, logits.data, -np.inf), axis=-1, keepdims=True)
    shifted = tz.where(m, logits, Tensor(row_max)) - row_max
    e = tz.exp(shifted) * m.astype(np.float64)
    return e * tz.tensor_sum(e, axis=-1, keepdims=True) ** -1.0


# ---- Dropout ----


def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: train scales kept units by 1/(1-p); eval is identity."""
    if not 0.0 <= p < 1.0:
        raise InvalidArgumentError("dropout p must be in [0, 1), got %r" % (p,))
    if mode == "eval" or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
    return x * keep


# ---- Binary cross-entropy ----


def bce_loss(p: Tensor, y: np.ndarray, clamp_eps: float = 1e-7) -> Tensor:
    """Mean of -(y ln p + (1-y) ln(1-p)) with p clamped away from {0, 1}."""
    p = tz._as_tensor(p)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != p.shape:
        raise ShapeError("bce labels shape %r != scores shape %r" % (y.shape, p.shape))
    if y.size == 0:
        raise InvalidArgumentError("bce_loss on empty input")
    pc = tz.clip(p, clamp_eps, 1.0 - clamp_eps)
    return tz.mean(-(y * tz.log(pc) + (1.0 - y) * tz.log(1.0 - pc)))


# ---- Bi-directional GRU ----


class GruParams:
    """One direction's gate parameters. Update rule:

    z = sigmoid(Wz x + Uz h + bz), r = sigmoid(Wr x + Ur h + br),
    hcand = tanh(Wh x + Uh (r*h) + bh), h' = (1-z)*h + z*hcand.
    """

    def __init__(self, w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h):
        self.w_z, self.w_r, self.w_h = w_z, w_r, w_h
        self.u_z, self.u_r, self.u_h = u_z, u_r, u_h
        self.b_z, self.b_r, self.b_h = b_z, b_r, b_h
        self.hidden_size = int(w_z.shape[0])

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "GruParams":
        t = lambda *s: Tensor(np.zeros(s), requires_grad=True)
        return cls(
            t(hidden_size, input_size), t(hidden_size, input_size), t(hidden_size, input_size),
            t(hidden_size, hidden_size), t(hidden_size, hidden_size), t(hidden_size, hidden_size),
            t(hidden_size), t(hidden_size), t(hidden_size),
        )

    def named(self, prefix: str):
        fields = ("w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h")
        return [("%s.%s" % (prefix, f), getattr(self, f)) for f in fields]


def _check_suffix_mask(mask: np.ndarray):
    if mask.dtype != bool:
        raise InvalidArgumentError("mask must be boolean")
    # True must form a prefix along time (axis 0): no gaps.
    t = mask.astype(np.int8)
    if (np.diff(t, axis=0) > 0).any():
        raise InvalidArgumentError("mask has an interior gap; padding must be a suffix")
    if not mask[0].all():
        raise InvalidArgumentError("mask has an interior gap; padding must be a suffix")


def _gru_direction(x: Tensor, p: GruParams, mask: np.ndarray, reverse: bool):
    """Scan one direction. Returns (outputs (T,B,H), final state (B,H)).

    Outputs are zeroed at masked positions; the state carries through masked
    steps unchanged, so a reverse scan effectively starts at each sequence's
    last real position.
    """
    n_t, n_b, _ = x.shape
    hidden = p.hidden_size
    w_all = tz.concat([p.w_z, p.w_r, p.w_h], axis=0)      # (3H, in)
    b_all = tz.concat([p.b_z, p.b_r, p.b_h], axis=0)      # (3H,)
    u_zr = tz.concat([p.u_z, p.u_r], axis=0)              # (2H, H)
    gates_x = tz.reshape(
        tz.matmul(tz.reshape(x, (n_t * n_b, -1)), tz.permute(w_all, (1, 0))) + b_all,
        (n_t, n_b, 3 * hidden),
    )
    h = Tensor(np.zeros((n_b, hidden)))
    outs = [None] * n_t
    steps = range(n_t - 1, -1, -1) if reverse else range(n_t)
    for t in steps:
        gx = gates_x[t]
        rec = tz.matmul(h, tz.permute(u_zr, (1, 0)))       # (B, 2H)
        z = tz.sigmoid(gx[:, :hidden] + rec[:, :hidden])
        r = tz.sigmoid(gx[:, hidden : 2 * hidden] + rec[:, hidden:])
        hcand = tz.tanh(gx[:, 2 * hidden :] + tz.matmul(r * h, tz.permute(p.u_h, (1, 0))))
        h_new = (1.0 - z) * h + z * hcand
        col = mask[t][:, None]
        h = tz.where(col, h_new, h)
        outs[t] = h * col.astype(np.float64)
    return tz.stack(outs, axis=0), h


def bigru_forward(x: Tensor, params_fwd: GruParams, params_bwd: GruParams,
                  mask: np.ndarray | None = None) -> Tensor:
    """Bi-directional GRU over (T,B,F) -> (T,B,2H), forward||backward concat."""
    out, _, _ = bigru_scan(x, params_fwd, params_bwd, mask)
    return out


def bigru_scan(x: Tensor, params_fwd: GruParams, params_bwd: GruParams,
               mask: np.ndarray | None = None):
    """As bigru_forward but also returns both final states (B,H) each.

    The forward final state is the state at each sequence's last real
    position; the backward final state is the state at position 0.
    """
    x = tz._as_tensor(x)
    if x.ndim != 3:
        raise ShapeError("bigru input must be (T,B,F), got %r" % (x.shape,))
    n_t, n_b, _ = x.shape
    if mask is None:
        mask = np.ones((n_t, n_b), dtype=bool)
    mask = np.asarray(mask)
    if mask.shape != (n_t, n_b):
        raise ShapeError("mask shape %r != (T,B)=%r" % (mask.shape, (n_t, n_b)))
    _check_suffix_mask(mask)
    out_f, h_f = _gru_direction(x, params_fwd, mask, reverse=False)
    out_b, h_b = _gru_direction(x, params_bwd, mask, reverse=True)
    return tz.concat([out_f, out_b], axis=2), h_f, h_b
