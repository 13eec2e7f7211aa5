"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough tape machinery for the routing-tree graphs: broadcast-aware
elementwise ops, batched matmul, reductions, indexing, and a custom-gradient
hook used by the nTVD similarity kernel. All data is float64; correctness is
pinned by the finite-difference checker in the trainer.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents")

    def __init__(self, data, requires_grad=False, parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(
            p.requires_grad for p, _ in parents
        )
        # parents recorded only while the tape is active
        self._parents = parents if (_grad_enabled and self.requires_grad) else ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- graph -------------------------------------------------------------

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without grad needs a scalar")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and not node._parents:
                node.grad = g if node.grad is None else node.grad + g
            for parent, fn in node._parents:
                if not parent.requires_grad:
                    continue
                pg = fn(g)
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    def zero_grad(self):
        self.grad = None

    # -- elementwise -------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        return Tensor(self.data + other.data, parents=(
            (self, lambda g: _unbroadcast(g, self.shape)),
            (other, lambda g: _unbroadcast(g, other.shape)),
        ))

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, parents=((self, lambda g: -g),))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        return Tensor(self.data * other.data, parents=(
            (self, lambda g: _unbroadcast(g * other.data, self.shape)),
            (other, lambda g: _unbroadcast(g * self.data, other.shape)),
        ))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        return Tensor(self.data / other.data, parents=(
            (self, lambda g: _unbroadcast(g / other.data, self.shape)),
            (other, lambda g: _unbroadcast(
                -g * self.data / (other.data**2), other.shape)),
        ))

    def __matmul__(self, other):
        other = as_tensor(other)
        out = np.matmul(self.data, other.data)
        return Tensor(out, parents=(
            (self, lambda g: _unbroadcast(
                np.matmul(g, np.swapaxes(other.data, -1, -2)), self.shape)),
            (other, lambda g: _unbroadcast(
                np.matmul(np.swapaxes(self.data, -1, -2), g), other.shape)),
        ))

    def exp(self):
        out = np.exp(self.data)
        return Tensor(out, parents=((self, lambda g: g * out),))

    def log(self):
        return Tensor(np.log(self.data),
                      parents=((self, lambda g: g / self.data),))

    def relu(self):
        mask = self.data > 0
        return Tensor(self.data * mask, parents=((self, lambda g: g * mask),))

    def sigmoid(self):
        # two-branch form, overflow-safe for large |x|
        x = self.data
        out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                       np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return Tensor(out, parents=((self, lambda g: g * out * (1.0 - out)),))

    def sqrt(self):
        out = np.sqrt(self.data)
        return Tensor(out, parents=((self, lambda g: g * 0.5 / out),))

    def abs(self):
        sign = np.sign(self.data)
        return Tensor(np.abs(self.data),
                      parents=((self, lambda g: g * sign),))

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def back(g):
            if axis is None:
                return np.broadcast_to(g, self.shape).copy()
            gg = g
            if not keepdims:
                gg = np.expand_dims(gg, axis)
            return np.broadcast_to(gg, self.shape).copy()

        return Tensor(out, parents=((self, back),))

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape --------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.shape
        return Tensor(self.data.reshape(shape),
                      parents=((self, lambda g: g.reshape(orig)),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        return Tensor(self.data.transpose(axes),
                      parents=((self, lambda g: g.transpose(inv)),))

    def __getitem__(self, key):
        out = self.data[key]

        def back(g):
            full = np.zeros_like(self.data)
            np.add.at(full, key, g)
            return full

        return Tensor(out, parents=((self, back),))

    def gather_axis1(self, idx: np.ndarray):
        """x[:, idx] for an integer index array; output (B, *idx.shape)."""
        idx = np.asarray(idx)
        out = self.data[:, idx]

        def back(g):
            full = np.zeros_like(self.data)
            np.add.at(full.transpose(), idx.reshape(-1),
                      g.reshape(g.shape[0], -1).transpose())
            return full

        return Tensor(out, parents=((self, back),))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concatenate(tensors: list[Tensor], axis: int = 0) -> Tensor:
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def make_back(i):
        lo, hi = offsets[i], offsets[i + 1]

        def back(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]

        return back

    parents = tuple((t, make_back(i)) for i, t in enumerate(tensors))
    return Tensor(np.concatenate(datas, axis=axis), parents=parents)


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    def make_back(i):
        def back(g):
            return np.take(g, i, axis=axis)

        return back

    parents = tuple((t, make_back(i)) for i, t in enumerate(tensors))
    return Tensor(np.stack([t.data for t in tensors], axis=axis),
                  parents=parents)


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-subtracted softmax; mask entries set False get zero probability.

    The shift is taken over unmasked entries only: a padded position must
    neither dominate the shift (which would underflow every real entry and
    divide by zero) nor overflow its own exponential.
    """
    if mask is None:
        shift = x.data.max(axis=axis, keepdims=True)
        z = (x - Tensor(shift)).exp()
        return z / z.sum(axis=axis, keepdims=True)
    m = mask.astype(np.float64)
    shift = np.where(mask, x.data, -np.inf).max(axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    # pin masked logits to the shift so their exp is a harmless 1 before
    # the mask zeroes it; gradient through x is killed by the same mask
    pinned = x * Tensor(m) + Tensor(shift * (1.0 - m))
    z = (pinned - Tensor(shift)).exp() * Tensor(m)
    return z / z.sum(axis=axis, keepdims=True)


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    shift = x.data.max(axis=axis, keepdims=True)
    z = (x - Tensor(shift)).exp().sum(axis=axis)
    return z.log() + Tensor(np.squeeze(shift, axis=axis))


def custom(out_data: np.ndarray, parents) -> Tensor:
    """Wrap an externally computed forward pass with explicit grad hooks."""
    return Tensor(out_data, parents=tuple(parents))
