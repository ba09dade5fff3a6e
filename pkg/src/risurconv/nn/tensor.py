"""Dense float32 tensors with a reverse-mode gradient tape."""

from __future__ import annotations

import contextlib

import numpy as np

DTYPE = np.float32
_default = [DTYPE]


def get_default_dtype():
    return _default[0]


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily build tensors in ``dtype`` (float64 is used by the gradient tests)."""
    prev = _default[0]
    _default[0] = np.dtype(dtype).type
    try:
        yield
    finally:
        _default[0] = prev


class GraphError(RuntimeError):
    """Raised on misuse of the gradient tape (non-scalar loss, repeated backward)."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=_default[0] if dtype is None else dtype, order="C")
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self._consumed = False
        self.name = name

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # ------------------------------------------------------------------ tape
    @staticmethod
    def _node(data, parents, backward) -> "Tensor":
        out = Tensor(data, dtype=data.dtype if data.dtype.kind == "f" else None)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf on the tape.

        The graph is released afterwards; a second call on the same loss raises.
        """
        if self._consumed:
            raise GraphError("backward() already ran on this graph; rebuild it with a new forward pass")
        if self.data.size != 1:
            raise GraphError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise GraphError("loss does not depend on any tensor requiring grad")

        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(pg, parent.shape).astype(parent.dtype, copy=False)
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg
        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
        self._consumed = True

    # ------------------------------------------------------------------ arithmetic
    def __add__(self, other):
        other = _lift(other, self.dtype)
        return Tensor._node(self.data + other.data, (self, other), lambda g: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        other = _lift(other, self.dtype)
        return Tensor._node(self.data - other.data, (self, other), lambda g: (g, -g))

    def __rsub__(self, other):
        return _lift(other, self.dtype) - self

    def __neg__(self):
        return Tensor._node(-self.data, (self,), lambda g: (-g,))

    def __mul__(self, other):
        other = _lift(other, self.dtype)
        a, b = self.data, other.data
        return Tensor._node(a * b, (self, other), lambda g: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _lift(other, self.dtype)
        a, b = self.data, other.data
        return Tensor._node(a / b, (self, other), lambda g: (g / b, -g * a / (b * b)))

    def __matmul__(self, other):
        return matmul(self, other)

    # ------------------------------------------------------------------ reductions / shape
    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return Tensor._node(np.asarray(self.data.sum(axis=axis, keepdims=keepdims)), (self,), back)

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._node(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        return Tensor._node(np.ascontiguousarray(self.data.transpose(axes)), (self,),
                            lambda g: (g.transpose(inv),))

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(axes)

    def __getitem__(self, index):
        shape, dtype = self.shape, self.dtype

        def back(g):
            full = np.zeros(shape, dtype=dtype)
            np.add.at(full, index, g)
            return (full,)

        return Tensor._node(np.ascontiguousarray(self.data[index]), (self,), back)

    def relu(self):
        mask = self.data > 0
        return Tensor._node(self.data * mask, (self,), lambda g: (g * mask,))

    def exp(self):
        out = np.exp(self.data)
        return Tensor._node(out, (self,), lambda g: (g * out,))

    def log(self):
        a = self.data
        return Tensor._node(np.log(a), (self,), lambda g: (g / a,))


def _lift(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x), dtype=dtype)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; a 2-D right operand is shared across the batch."""
    x, w = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(w, -1, -2)
        if w.ndim == 2:
            gb = x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(x, -1, -2) @ g
        return ga, gb

    return Tensor._node(x @ w, (a, b), back)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def backward(loss: Tensor, params=None) -> list[np.ndarray] | None:
    """Run reverse-mode accumulation from ``loss``.

    With ``params`` given, returns their gradients in order; parameters the loss
    does not reach get zeros.
    """
    loss.backward()
    if params is None:
        return None
    return [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
