"""Dense tensors with reverse-mode automatic differentiation.

Arrays are numpy-backed (f32 for training, f64 for gradient verification).
Every operation that produces a tensor records its parents and a backward
closure; `Tensor.backward` replays those closures in reverse creation order,
which is a valid reverse-topological order because an op's inputs always
predate its output. That fixed order makes gradient accumulation
deterministic run to run.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.special import erf

from .errors import ContractError, ShapeError

_FLOATS = (np.float32, np.float64)
_ids = itertools.count()


def _as_array(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in _FLOATS:
        arr = arr.astype(np.float32)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A node in the autodiff graph.

    Invariants: `data` is a row-major float array; `grad`, when present,
    has the same shape and dtype as `data`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_backward", "_parents", "_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self._backward = None
        self._parents = ()
        self._id = next(_ids)

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: tuple, backward) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def _wrap(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            if other.data.dtype != self.data.dtype:
                raise ShapeError(
                    f"dtype mismatch: {self.data.dtype} vs {other.data.dtype}"
                )
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # -- backward pass --------------------------------------------------------

    def backward(self) -> None:
        """Populate `grad` on every reachable tensor with requires_grad.

        The receiver must be a scalar (a single-element tensor). Gradients
        accumulate, so parameters shared between objectives simply sum their
        contributions across multiple backward calls.
        """
        if self.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        # Reachable subgraph, processed in descending creation index: every
        # consumer runs before its producer, so grads are complete when read.
        nodes = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if node._id in nodes:
                continue
            nodes[node._id] = node
            stack.extend(node._parents)
        if self.grad is None:
            self.grad = np.ones_like(self.data)
        else:
            self.grad = self.grad + np.ones_like(self.data)
        for nid in sorted(nodes, reverse=True):
            node = nodes[nid]
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        g = _unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = self._wrap(other)
        a, b = self, other

        def backward(g):
            a._accum(g)
            b._accum(g)

        return Tensor._from_op(a.data + b.data, (a, b), backward)

    __radd__ = __add__

    def __mul__(self, other):
        other = self._wrap(other)
        a, b = self, other

        def backward(g):
            a._accum(g * b.data)
            b._accum(g * a.data)

        return Tensor._from_op(a.data * b.data, (a, b), backward)

    __rmul__ = __mul__

    def __neg__(self):
        a = self
        return Tensor._from_op(-a.data, (a,), lambda g: a._accum(-g))

    def __sub__(self, other):
        return self + (-self._wrap(other))

    def __rsub__(self, other):
        return (-self) + other

    def __truediv__(self, other):
        other = self._wrap(other)
        a, b = self, other

        def backward(g):
            a._accum(g / b.data)
            b._accum(-g * a.data / (b.data * b.data))

        return Tensor._from_op(a.data / b.data, (a, b), backward)

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise ContractError("only scalar exponents are supported")
        a, c = self, exponent

        def backward(g):
            a._accum(g * c * a.data ** (c - 1))

        return Tensor._from_op(a.data**c, (a,), backward)

    def __matmul__(self, other):
        other = self._wrap(other)
        a, b = self, other
        if a.data.ndim < 2 or b.data.ndim < 2:
            raise ShapeError(
                f"matmul needs >=2-d operands, got {a.data.shape} and {b.data.shape}"
            )
        if a.data.shape[-1] != b.data.shape[-2]:
            raise ShapeError(
                f"matmul inner extents disagree: {a.data.shape} x {b.data.shape}"
            )
        try:
            out = np.matmul(a.data, b.data)
        except ValueError as exc:  # non-broadcastable batch extents
            raise ShapeError(
                f"matmul batch extents incompatible: {a.data.shape} x {b.data.shape}"
            ) from exc

        def backward(g):
            a._accum(np.matmul(g, b.data.swapaxes(-1, -2)))
            b._accum(np.matmul(a.data.swapaxes(-1, -2), g))

        return Tensor._from_op(out, (a, b), backward)

    # -- shape ops ------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = a.data.shape
        return Tensor._from_op(
            a.data.reshape(shape), (a,), lambda g: a._accum(g.reshape(old))
        )

    def transpose(self, axes):
        a = self
        axes = tuple(axes)
        inverse = tuple(np.argsort(axes))
        return Tensor._from_op(
            a.data.transpose(axes), (a,), lambda g: a._accum(g.transpose(inverse))
        )

    def __getitem__(self, key):
        # Basic indexing only (ints/slices); elements never repeat, so the
        # backward scatter is a plain assignment.
        a = self
        out = a.data[key]

        def backward(g):
            buf = np.zeros_like(a.data)
            buf[key] = g
            a._accum(buf)

        return Tensor._from_op(np.ascontiguousarray(out), (a,), backward)

    def gather_tokens(self, index: np.ndarray) -> "Tensor":
        """Select rows along the token axis.

        For data (L, d) index is (K,); for data (B, L, d) index is (B, K),
        selecting per-batch rows. Backward scatter-adds sequentially, which
        keeps accumulation order fixed.
        """
        a = self
        idx = np.asarray(index)
        if a.data.ndim == 2:
            if idx.ndim != 1:
                raise ShapeError(f"expected 1-d index for 2-d tensor, got {idx.shape}")
            out = a.data[idx]

            def backward(g):
                buf = np.zeros_like(a.data)
                np.add.at(buf, idx, g)
                a._accum(buf)

        elif a.data.ndim == 3:
            if idx.ndim != 2 or idx.shape[0] != a.data.shape[0]:
                raise ShapeError(
                    f"expected ({a.data.shape[0]}, K) index, got {idx.shape}"
                )
            out = np.take_along_axis(a.data, idx[:, :, None], axis=1)
            rows = np.arange(a.data.shape[0])[:, None]

            def backward(g):
                buf = np.zeros_like(a.data)
                np.add.at(buf, (rows, idx), g)
                a._accum(buf)

        else:
            raise ShapeError(f"gather_tokens supports 2-d/3-d data, got {a.data.shape}")
        return Tensor._from_op(out, (a,), backward)

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        out = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is None:
                a._accum(np.broadcast_to(g, a.data.shape).copy())
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.data.shape).copy())

        return Tensor._from_op(np.asarray(out), (a,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- elementwise nonlinearities --------------------------------------------

    def exp(self):
        a = self
        out = np.exp(a.data)
        return Tensor._from_op(out, (a,), lambda g: a._accum(g * out))

    def log(self):
        a = self
        return Tensor._from_op(np.log(a.data), (a,), lambda g: a._accum(g / a.data))

    def sigmoid(self):
        a = self
        out = _sigmoid(a.data)
        return Tensor._from_op(out, (a,), lambda g: a._accum(g * out * (1.0 - out)))

    def gelu(self):
        a = self
        return Tensor._from_op(
            _gelu(a.data), (a,), lambda g: a._accum(g * _gelu_grad(a.data))
        )

    def softmax(self, axis: int = -1):
        """Stable softmax along `axis` (max-subtracted)."""
        a = self
        shifted = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=axis, keepdims=True)

        def backward(g):
            dot = (g * out).sum(axis=axis, keepdims=True)
            a._accum(out * (g - dot))

        return Tensor._from_op(out, (a,), backward)

    def layer_norm(self, gamma: "Tensor", beta: "Tensor", eps: float = 1e-5):
        """Normalize the last axis to mean 0 / variance 1, then scale and shift."""
        a = self
        d = a.data.shape[-1]
        if d == 0:
            raise ShapeError("layer_norm over an empty last axis")
        gamma = self._wrap(gamma)
        beta = self._wrap(beta)
        mu = a.data.mean(axis=-1, keepdims=True)
        var = ((a.data - mu) ** 2).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=a.data.dtype))
        xhat = (a.data - mu) * inv
        out = xhat * gamma.data + beta.data

        def backward(g):
            gxhat = g * gamma.data
            m1 = gxhat.mean(axis=-1, keepdims=True)
            m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
            a._accum(inv * (gxhat - m1 - xhat * m2))
            reduce_axes = tuple(range(g.ndim - 1))
            gamma._accum((g * xhat).sum(axis=reduce_axes))
            beta._accum(g.sum(axis=reduce_axes))

        return Tensor._from_op(out, (a, gamma, beta), backward)


# -- module-level kernels (separable so tests can fault-inject them) ----------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def _gelu(x: np.ndarray) -> np.ndarray:
    # exact-erf variant
    return (0.5 * x * (1.0 + erf(x * _INV_SQRT2))).astype(x.dtype)


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    phi = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return (0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * phi).astype(x.dtype)


# -- free functions ------------------------------------------------------------


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat of an empty tensor list")
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accum(g[tuple(sl)])

    return Tensor._from_op(out, tuple(tensors), backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [t.reshape(t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(tensors, axis=axis)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return a @ b


def zeros(shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)
