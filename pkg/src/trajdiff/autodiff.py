"""Minimal reverse-mode autodiff over numpy arrays.

Just enough machinery for a small transformer: broadcasting arithmetic,
(batched) matmul, reductions, reshapes, slicing/concatenation, softmax and
gelu primitives. Everything is plain numpy underneath, so results are
deterministic and dtype follows the inputs (float32 or float64).
"""

import math

import numpy as np
from scipy.special import erf

_GRAD_ENABLED = True


class no_grad:
    """Context manager disabling graph construction (e.g. during sampling)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad and _GRAD_ENABLED
        self._backward = _backward if self.requires_grad else None
        self._parents = _parents if self.requires_grad else ()

    # -- basics ----------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = grad.copy() if isinstance(grad, np.ndarray) else np.asarray(grad)
        else:
            self.grad = self.grad + grad

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other, self.dtype)
        out = Tensor(
            self.data + other.data,
            requires_grad=self.requires_grad or other.requires_grad,
            _parents=(self, other),
        )
        if out.requires_grad:
            def backward(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g, self.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(g, other.shape))
            out._backward = backward
        return out

    def __mul__(self, other):
        other = as_tensor(other, self.dtype)
        out = Tensor(
            self.data * other.data,
            requires_grad=self.requires_grad or other.requires_grad,
            _parents=(self, other),
        )
        if out.requires_grad:
            def backward(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g * other.data, self.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(g * self.data, other.shape))
            out._backward = backward
        return out

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return as_tensor(other, self.dtype) + (-self)

    def __truediv__(self, other):
        other = as_tensor(other, self.dtype)
        return self * other.pow(-1.0)

    __radd__ = __add__
    __rmul__ = __mul__

    def pow(self, exponent: float) -> "Tensor":
        out = Tensor(
            self.data ** exponent,
            requires_grad=self.requires_grad,
            _parents=(self,),
        )
        if out.requires_grad:
            def backward(g):
                self._accumulate(g * exponent * self.data ** (exponent - 1.0))
            out._backward = backward
        return out

    def sqrt(self) -> "Tensor":
        return self.pow(0.5)

    def __matmul__(self, other):
        other = as_tensor(other, self.dtype)
        out = Tensor(
            self.data @ other.data,
            requires_grad=self.requires_grad or other.requires_grad,
            _parents=(self, other),
        )
        if out.requires_grad:
            def backward(g):
                if self.requires_grad:
                    ga = g @ other.data.swapaxes(-1, -2)
                    self._accumulate(_unbroadcast(ga, self.shape))
                if other.requires_grad:
                    gb = self.data.swapaxes(-1, -2) @ g
                    other._accumulate(_unbroadcast(gb, other.shape))
            out._backward = backward
        return out

    # -- reductions ------------------------------------------------------
    def sum(self, axis=None, keepdims=False) -> "Tensor":
        out = Tensor(
            self.data.sum(axis=axis, keepdims=keepdims),
            requires_grad=self.requires_grad,
            _parents=(self,),
        )
        if out.requires_grad:
            def backward(g):
                self._accumulate(_spread(g, self.shape, axis, keepdims))
            out._backward = backward
        return out

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        scale = self.data.size if axis is None else _axis_size(self.shape, axis)
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / scale)

    # -- shape ops -------------------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(
            self.data.reshape(shape),
            requires_grad=self.requires_grad,
            _parents=(self,),
        )
        if out.requires_grad:
            def backward(g):
                self._accumulate(g.reshape(self.shape))
            out._backward = backward
        return out

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        out = Tensor(
            self.data.transpose(axes),
            requires_grad=self.requires_grad,
            _parents=(self,),
        )
        if out.requires_grad:
            inverse = np.argsort(axes)
            def backward(g):
                self._accumulate(g.transpose(inverse))
            out._backward = backward
        return out

    def __getitem__(self, index) -> "Tensor":
        out = Tensor(
            self.data[index],
            requires_grad=self.requires_grad,
            _parents=(self,),
        )
        if out.requires_grad:
            def backward(g):
                full = np.zeros_like(self.data)
                full[index] += g
                self._accumulate(full)
            out._backward = backward
        return out

    # -- nonlinearities ----------------------------------------------------
    def gelu(self) -> "Tensor":
        x = self.data
        cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
        out = Tensor(x * cdf, requires_grad=self.requires_grad, _parents=(self,))
        if out.requires_grad:
            pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
            def backward(g):
                self._accumulate(g * (cdf + x * pdf))
            out._backward = backward
        return out

    def softmax(self, axis: int = -1) -> "Tensor":
        # Stable softmax; tolerates -inf entries as long as each slice has a
        # finite maximum (masked attention never blanks a whole row).
        shifted = self.data - np.max(self.data, axis=axis, keepdims=True)
        exp = np.exp(shifted)
        y = exp / exp.sum(axis=axis, keepdims=True)
        out = Tensor(y, requires_grad=self.requires_grad, _parents=(self,))
        if out.requires_grad:
            def backward(g):
                inner = (g * y).sum(axis=axis, keepdims=True)
                self._accumulate((g - inner) * y)
            out._backward = backward
        return out

    # -- autodiff ----------------------------------------------------------
    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)


def _axis_size(shape, axis) -> int:
    if isinstance(axis, int):
        return shape[axis]
    size = 1
    for a in axis:
        size *= shape[a]
    return size


def _spread(grad: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    """Broadcast a reduced gradient back over the reduced axes."""
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % len(shape) for a in axes)
        grad = np.expand_dims(grad, axes)
    return np.broadcast_to(grad, shape)


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value, dtype=dtype if dtype is not None else np.float64)
    return Tensor(arr)


def parameter(array, dtype=np.float64) -> Tensor:
    return Tensor(np.ascontiguousarray(array, dtype=dtype), requires_grad=True)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [t for t in tensors]
    out = Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        requires_grad=any(t.requires_grad for t in tensors),
        _parents=tuple(tensors),
    )
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def backward(g):
            for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    index = [slice(None)] * g.ndim
                    index[axis] = slice(start, stop)
                    t._accumulate(g[tuple(index)])
        out._backward = backward
    return out


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None
