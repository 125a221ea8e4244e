"""Dense float64 tensors with reverse-mode automatic differentiation.

A :class:`Tensor` is both the value and the graph node: operations on
tensors that require gradients record their parents together with a
closure that maps the output gradient to one gradient per parent.
:meth:`Tensor.backward` walks the graph in reverse topological order and
*accumulates* into ``.grad``; call :meth:`Tensor.zero_grad` (or the
optimizer's ``zero_grad``) between steps.
"""

from contextlib import contextmanager

import numpy as np

from .errors import ContractError, DimensionError

__all__ = [
    "Tensor",
    "no_grad",
    "is_grad_enabled",
    "as_tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "exp",
    "max0",
    "elementwise",
    "tensor_sum",
    "tensor_mean",
    "reshape",
]

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    global _GRAD_ENABLED
    previous, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled():
    return _GRAD_ENABLED


class Tensor:
    """Row-major float64 array plus autodiff bookkeeping.

    Parameters
    ----------
    data : array_like
        Values; copied to a contiguous ``float64`` array.
    requires_grad : bool
        Whether gradients should flow into this tensor.
    name : str, optional
        Label used in error messages and parameter directories.
    """

    __slots__ = ("data", "_grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self._grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    @classmethod
    def _from_op(cls, data, parents, backward):
        out = cls.__new__(cls)
        out.data = np.ascontiguousarray(data, dtype=np.float64)
        if out.data.ndim == 0:
            out.data = out.data.reshape(1)
        out._grad = None
        out.name = None
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def grad(self):
        """Accumulated gradient; zeros until a backward pass reaches this node."""
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = None if value is None else np.asarray(value, dtype=np.float64)

    def zero_grad(self):
        self._grad = None

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # operator sugar
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        """Accumulate d(self)/d(node) into every reachable node needing it."""
        if self.data.size != 1:
            raise ContractError(
                f"backward() needs a scalar loss of shape [1], got shape {list(self.shape)}"
            )
        order = _topological_order(self)
        upstream = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = upstream.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node._grad is None:
                    node._grad = g.copy()
                else:
                    node._grad += g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in upstream:
                    upstream[key] = upstream[key] + pg
                else:
                    upstream[key] = pg


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {list(a.shape)} and {list(b.shape)} differ")


def matmul(a, b):
    """Matrix product of ``[m, k]`` and ``[k, n]`` tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul: cannot multiply shapes {list(a.shape)} and {list(b.shape)}"
        )
    A, B = a.data, b.data

    def backward(g):
        return g @ B.T, A.T @ g

    return Tensor._from_op(A @ B, (a, b), backward)


def add(a, b):
    _same_shape(a, b, "add")
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    _same_shape(a, b, "sub")
    return Tensor._from_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    _same_shape(a, b, "mul")
    A, B = a.data, b.data
    return Tensor._from_op(A * B, (a, b), lambda g: (g * B, g * A))


def scale(a, factor):
    factor = float(factor)
    return Tensor._from_op(a.data * factor, (a,), lambda g: (g * factor,))


def exp(a):
    y = np.exp(a.data)
    return Tensor._from_op(y, (a,), lambda g: (g * y,))


def max0(a):
    mask = a.data > 0
    return Tensor._from_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "scale": scale, "exp": exp, "max0": max0}


def elementwise(op, *args):
    """Dispatch by name: ``elementwise("add", a, b)``, ``elementwise("scale", a, 2.0)``."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


def tensor_sum(a):
    shape = a.shape
    return Tensor._from_op(
        np.array([a.data.sum()]), (a,), lambda g: (np.full(shape, g[0]),)
    )


def tensor_mean(a):
    shape, n = a.shape, a.data.size
    return Tensor._from_op(
        np.array([a.data.mean()]), (a,), lambda g: (np.full(shape, g[0] / n),)
    )


def reshape(a, shape):
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {list(old)} as {list(shape)}") from None
    return Tensor._from_op(out, (a,), lambda g: (g.reshape(old),))
