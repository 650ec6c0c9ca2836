"""Dense tensors with reverse-mode differentiation.

The graph is define-by-run: every operation records its parents and a
closure that scatters the output gradient back to them.  ``backward``
on a scalar walks the graph once in reverse topological order.  Node
ids are a global counter so the traversal order (and therefore float
accumulation order) is identical between runs with identical inputs.

Values live in numpy arrays.  float32 is the default for training;
gradient-check builds use float64 (finite differences are unreliable
in single precision).
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError

DEFAULT_DTYPE = np.float32

_ids = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense array plus its slot in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "op", "nid", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), op="leaf"):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self.nid = next(_ids)
        self._parents = parents
        self._backward = None

    # -- graph bookkeeping -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, dtype={self.data.dtype})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Fill gradient slots of every reachable tensor.

        The loss must be scalar.  Tensors the loss does not depend on
        keep ``grad is None``; callers that need dense gradients use
        :func:`grads_of`.
        """
        if self.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {self.data.shape}")
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.nid in visited:
                continue
            visited.add(node.nid)
            stack.append((node, True))
            for p in node._parents:
                if p.nid not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        other = _wrap(other, self.dtype)
        out = _make(self.data + other.data, (self, other), "add")
        if out._parents:
            def backward():
                _accum(self, _unbroadcast(out.grad, self.shape))
                _accum(other, _unbroadcast(out.grad, other.shape))
            out._backward = backward
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other = _wrap(other, self.dtype)
        out = _make(self.data - other.data, (self, other), "sub")
        if out._parents:
            def backward():
                _accum(self, _unbroadcast(out.grad, self.shape))
                _accum(other, _unbroadcast(-out.grad, other.shape))
            out._backward = backward
        return out

    def __rsub__(self, other):
        return _wrap(other, self.dtype) - self

    def __mul__(self, other):
        other = _wrap(other, self.dtype)
        out = _make(self.data * other.data, (self, other), "mul")
        if out._parents:
            def backward():
                _accum(self, _unbroadcast(out.grad * other.data, self.shape))
                _accum(other, _unbroadcast(out.grad * self.data, other.shape))
            out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other, self.dtype)
        out = _make(self.data / other.data, (self, other), "div")
        if out._parents:
            def backward():
                _accum(self, _unbroadcast(out.grad / other.data, self.shape))
                _accum(other, _unbroadcast(-out.grad * self.data / (other.data ** 2),
                                           other.shape))
            out._backward = backward
        return out

    def __neg__(self):
        out = _make(-self.data, (self,), "neg")
        if out._parents:
            def backward():
                _accum(self, -out.grad)
            out._backward = backward
        return out

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise ContractError("only scalar exponents are supported")
        out = _make(self.data ** exponent, (self,), "pow")
        if out._parents:
            def backward():
                _accum(self, out.grad * exponent * self.data ** (exponent - 1))
            out._backward = backward
        return out

    def __getitem__(self, index):
        out = _make(self.data[index], (self,), "slice")
        if out._parents:
            def backward():
                g = np.zeros_like(self.data)
                g[index] += out.grad
                _accum(self, g)
            out._backward = backward
        return out

    # -- elementwise -------------------------------------------------------

    def exp(self):
        out = _make(np.exp(self.data), (self,), "exp")
        if out._parents:
            def backward():
                _accum(self, out.grad * out.data)
            out._backward = backward
        return out

    def log(self):
        out = _make(np.log(self.data), (self,), "log")
        if out._parents:
            def backward():
                _accum(self, out.grad / self.data)
            out._backward = backward
        return out

    def sqrt(self):
        out = _make(np.sqrt(self.data), (self,), "sqrt")
        if out._parents:
            def backward():
                _accum(self, out.grad * 0.5 / out.data)
            out._backward = backward
        return out

    def tanh(self):
        out = _make(np.tanh(self.data), (self,), "tanh")
        if out._parents:
            def backward():
                _accum(self, out.grad * (1.0 - out.data ** 2))
            out._backward = backward
        return out

    def sigmoid(self):
        out = _make(_sigmoid(self.data), (self,), "sigmoid")
        if out._parents:
            def backward():
                _accum(self, out.grad * out.data * (1.0 - out.data))
            out._backward = backward
        return out

    def abs(self):
        out = _make(np.abs(self.data), (self,), "abs")
        if out._parents:
            def backward():
                _accum(self, out.grad * np.sign(self.data))
            out._backward = backward
        return out

    def clip(self, lo: float, hi: float):
        """Hard clamp; gradient passes through the unclipped region."""
        out = _make(np.clip(self.data, lo, hi), (self,), "clip")
        if out._parents:
            inside = (self.data >= lo) & (self.data <= hi)
            def backward():
                _accum(self, out.grad * inside)
            out._backward = backward
        return out

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = _make(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum")
        if out._parents:
            def backward():
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                _accum(self, np.broadcast_to(g, self.shape).copy())
            out._backward = backward
        return out

    def mean(self, axis=None, keepdims=False):
        count = self.size if axis is None else _axis_count(self.shape, axis)
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def amin(self, axis: int):
        """Minimum along one axis; ties route gradient to the lowest index."""
        idx = np.argmin(self.data, axis=axis)
        out = _make(np.take_along_axis(self.data, np.expand_dims(idx, axis),
                                       axis=axis).squeeze(axis), (self,), "amin")
        if out._parents:
            def backward():
                g = np.zeros_like(self.data)
                np.put_along_axis(g, np.expand_dims(idx, axis),
                                  np.expand_dims(out.grad, axis), axis=axis)
                _accum(self, g)
            out._backward = backward
        return out

    # -- layout --------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        try:
            data = self.data.reshape(shape)
        except ValueError as exc:
            raise DimensionError(str(exc)) from None
        out = _make(data, (self,), "reshape")
        if out._parents:
            def backward():
                _accum(self, out.grad.reshape(self.shape))
            out._backward = backward
        return out

    def transpose(self, axes=None):
        out = _make(self.data.transpose(axes), (self,), "transpose")
        if out._parents:
            inv = None if axes is None else np.argsort(axes)
            def backward():
                _accum(self, out.grad.transpose(inv))
            out._backward = backward
        return out

    @property
    def T(self):
        return self.transpose()

    # -- linear algebra -------------------------------------------------------

    def matmul(self, other):
        other = _wrap(other, self.dtype)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise DimensionError("matmul expects rank-2 operands")
        if self.shape[1] != other.shape[0]:
            raise DimensionError(
                f"matmul inner extents differ: {self.shape} x {other.shape}")
        out = _make(self.data @ other.data, (self, other), "matmul")
        if out._parents:
            def backward():
                _accum(self, out.grad @ other.data.T)
                _accum(other, self.data.T @ out.grad)
            out._backward = backward
        return out

    __matmul__ = matmul


# -- helpers ----------------------------------------------------------------


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _make(data, parents, op) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True, parents=parents, op=op)
    else:
        out = Tensor(data, op=op)
    return out


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _axis_count(shape, axis):
    if isinstance(axis, int):
        axis = (axis,)
    n = 1
    for a in axis:
        n *= shape[a]
    return n


def grads_of(params) -> list[np.ndarray]:
    """Gradients for ``params``, zero-filled where the loss was independent."""
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


# -- free functions -----------------------------------------------------------


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat of an empty list")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    out = _make(data, tuple(tensors), "concat")
    if out._parents:
        sizes = [t.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def backward():
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                sl = [slice(None)] * out.grad.ndim
                sl[axis] = slice(lo, hi)
                _accum(t, out.grad[tuple(sl)])
        out._backward = backward
    return out


def leaky_relu(x: Tensor, slope: float = 1e-2) -> Tensor:
    out = _make(np.where(x.data >= 0, x.data, slope * x.data), (x,), "leaky_relu")
    if out._parents:
        def backward():
            _accum(x, out.grad * np.where(x.data >= 0, 1.0, slope))
        out._backward = backward
    return out


def squash(v: Tensor, axis: int = -1) -> Tensor:
    """Vector non-linearity scaling magnitude to ||v||^2 / (1 + ||v||^2).

    The zero vector maps to zero (analytic limit); the backward pass
    guards the norm denominator with 1e-12.
    """
    n = np.sqrt((v.data ** 2).sum(axis=axis, keepdims=True))
    scale = n / (1.0 + n ** 2)
    out = _make(v.data * scale, (v,), "squash")
    if out._parents:
        def backward():
            gv = (out.grad * v.data).sum(axis=axis, keepdims=True)
            dscale = (1.0 - n ** 2) / (1.0 + n ** 2) ** 2
            _accum(v, out.grad * scale + gv * dscale * v.data / (n + 1e-12))
        out._backward = backward
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (N,C,H,W or C,H,W) with kernels (K,C,h,w)."""
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or w.data.ndim != 4:
        raise DimensionError("conv2d expects (N,C,H,W) input and (K,C,h,w) kernels")
    n, c, h, wih = xd.shape
    k, cw, kh, kw = w.data.shape
    if cw != c:
        raise DimensionError(f"kernel channels {cw} != input channels {c}")
    if kh > h + 2 * padding or kw > wih + 2 * padding:
        raise DimensionError("kernel larger than padded input")
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * ho * wo, c * kh * kw)
    flat = cols @ w.data.reshape(k, -1).T
    if b is not None:
        flat = flat + b.data
    data = flat.reshape(n, ho, wo, k).transpose(0, 3, 1, 2)
    if squeeze:
        data = data[0]
    parents = (x, w) if b is None else (x, w, b)
    out = _make(data, parents, "conv2d")
    if out._parents:
        def backward():
            g = out.grad[None] if squeeze else out.grad
            gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, k)
            _accum(w, (gmat.T @ cols).reshape(w.shape))
            if b is not None:
                _accum(b, gmat.sum(axis=0))
            gcols = (gmat @ w.data.reshape(k, -1)).reshape(
                n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            gx = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i:i + stride * ho:stride,
                       j:j + stride * wo:stride] += gcols[:, :, :, :, i, j]
            if padding:
                gx = gx[:, :, padding:-padding, padding:-padding]
            _accum(x, gx[0] if squeeze else gx)
        out._backward = backward
    return out


def lstm_cell(x: Tensor, h: Tensor, c: Tensor,
              w_x: Tensor, w_h: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One step of a gated recurrent update (input/forget/cell/output gates).

    ``w_x`` is (input, 4H), ``w_h`` is (H, 4H), ``b`` is (4H,); the gate
    order along the last axis is i, f, g, o.
    """
    hidden = h.shape[-1]
    if w_x.shape[1] != 4 * hidden or w_h.shape != (hidden, 4 * hidden):
        raise DimensionError("lstm weight extents inconsistent with hidden size")
    z = x @ w_x + h @ w_h + b
    i = z[:, :hidden].sigmoid()
    f = z[:, hidden:2 * hidden].sigmoid()
    g = z[:, 2 * hidden:3 * hidden].tanh()
    o = z[:, 3 * hidden:].sigmoid()
    c2 = f * c + i * g
    h2 = o * c2.tanh()
    return h2, c2


def repeat_rows(x: Tensor, repeats: int) -> Tensor:
    """(N, F) -> (N * repeats, F), each row repeated consecutively."""
    if x.data.ndim != 2:
        raise DimensionError("repeat_rows expects a rank-2 tensor")
    out = _make(np.repeat(x.data, repeats, axis=0), (x,), "repeat_rows")
    if out._parents:
        def backward():
            _accum(x, out.grad.reshape(x.shape[0], repeats, x.shape[1]).sum(axis=1))
        out._backward = backward
    return out


def gaussian_sample(shape, rng: np.random.Generator, dtype=None) -> Tensor:
    """I.i.d. standard-normal draws as a constant (non-differentiable) tensor."""
    return Tensor(rng.standard_normal(shape, dtype=dtype or DEFAULT_DTYPE))


def zeros(shape, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or DEFAULT_DTYPE))
