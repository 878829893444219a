"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every op builds a graph node holding its parents and a closure that maps the
upstream gradient to per-parent gradients. `Tensor.backward()` runs an
iterative topological sweep, so graph depth (long GRU unrolls) never hits the
Python recursion limit. Gradients accumulate into leaf tensors only.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidArgumentError, ShapeError

# ---- Node plumbing ----


class Tensor:
    """Graph node: float64 values, optional gradient, backward closure."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    # Make ndarray <op> Tensor dispatch to our reflected operators instead of
    # numpy broadcasting over the Tensor object.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's .grad.

        Repeated calls without zero_grad() keep accumulating.
        """
        if self.data.size != 1:
            raise InvalidArgumentError(
                "backward() requires a scalar, got shape %r" % (self.shape,)
            )
        if not self.requires_grad:
            return

        # Iterative post-order DFS; visit only grad-requiring nodes.
        order = []
        seen = {id(self)}
        stack = [(self, iter(self._parents))]
        while stack:
            node, parents = stack[-1]
            advanced = False
            for p in parents:
                if p.requires_grad and id(p) not in seen:
                    seen.add(id(p))
                    stack.append((p, iter(p._parents)))
                    advanced = True
                    break
            if not advanced:
                order.append(node)
                stack.pop()

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg

    def __repr__(self):
        return "Tensor(shape=%r, requires_grad=%r)" % (self.shape, self.requires_grad)

    # Operator sugar delegates to the module-level ops.

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        return getitem(self, key)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---- Elementwise ops ----


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(a.data + b.data, (a, b), bwd)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bwd(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _node(a.data * b.data, (a, b), bwd)


def power(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    p = float(exponent)
    out = a.data**p
    return _node(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # Split by sign so exp never overflows.
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def leaky_relu(a, alpha: float = 0.01) -> Tensor:
    a = _as_tensor(a)
    slope = np.where(a.data >= 0, 1.0, alpha)
    return _node(a.data * slope, (a,), lambda g: (g * slope,))


def clip(a, lo: float, hi: float) -> Tensor:
    a = _as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def where(mask: np.ndarray, a, b) -> Tensor:
    """Select a where mask else b; mask is a plain bool array, not a node."""
    a, b = _as_tensor(a), _as_tensor(b)
    m = np.asarray(mask, dtype=bool)

    def bwd(g):
        return (
            _unbroadcast(np.where(m, g, 0.0), a.data.shape),
            _unbroadcast(np.where(m, 0.0, g), b.data.shape),
        )

    return _node(np.where(m, a.data, b.data), (a, b), bwd)


# ---- Shape ops ----


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.data.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def permute(a, axes) -> Tensor:
    a = _as_tensor(a)
    inverse = np.argsort(axes)
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def getitem(a, key) -> Tensor:
    """Basic (slice/integer) indexing only; index regions must not overlap."""
    a = _as_tensor(a)

    def bwd(g):
        out = np.zeros_like(a.data)
        out[key] = g
        return (out,)

    return _node(a.data[key], (a,), bwd)


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bwd)


def stack(parts, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]

    def bwd(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _node(np.stack([p.data for p in parts], axis=axis), tuple(parts), bwd)


def pad(a, pad_width) -> Tensor:
    """Zero-pad; pad_width is a per-axis (before, after) tuple list."""
    a = _as_tensor(a)
    slices = tuple(
        slice(before, before + n) for (before, _), n in zip(pad_width, a.data.shape)
    )
    return _node(np.pad(a.data, pad_width), (a,), lambda g: (g[slices],))


# ---- Reductions ----


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    shape = a.data.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        g_k = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_k, shape).copy(),)

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in np.atleast_1d(axis)]
    )
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


# ---- Linear algebra ----


def matmul(a, b) -> Tensor:
    """np.matmul semantics for 2-D or stacked 3-D operands (no 1-D)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul requires >=2-D operands, got %r @ %r" % (a.shape, b.shape))

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _node(np.matmul(a.data, b.data), (a, b), bwd)


def extract_patches(a, kh: int, kw: int, stride_h: int, stride_w: int) -> Tensor:
    """(B,C,H,W), already padded -> (B,Ho,Wo,C*kh*kw) kernel-tap patches.

    Flattened feature order is channel-major, tap-minor, matching
    kernel.reshape(C_out, C_in*kh*kw).
    """
    a = _as_tensor(a)
    batch, chans, height, width = a.data.shape
    out_h = (height - kh) // stride_h + 1
    out_w = (width - kw) // stride_w + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError("patch window %dx%d exceeds input %dx%d" % (kh, kw, height, width))

    taps = []
    for i in range(kh):
        for j in range(kw):
            taps.append(
                a.data[:, :, i : i + stride_h * (out_h - 1) + 1 : stride_h,
                       j : j + stride_w * (out_w - 1) + 1 : stride_w]
            )
    patches = np.stack(taps, axis=2)  # (B, C, kh*kw, Ho, Wo)
    out = patches.transpose(0, 3, 4, 1, 2).reshape(batch, out_h, out_w, chans * kh * kw)

    def bwd(g):
        g_taps = g.reshape(batch, out_h, out_w, chans, kh * kw).transpose(0, 3, 4, 1, 2)
        gx = np.zeros_like(a.data)
        idx = 0
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i : i + stride_h * (out_h - 1) + 1 : stride_h,
                   j : j + stride_w * (out_w - 1) + 1 : stride_w] += g_taps[:, :, idx]
                idx += 1
        return (gx,)

    return _node(out, (a,), bwd)
