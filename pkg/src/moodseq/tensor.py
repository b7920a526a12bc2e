"""Dense tensors with reverse-mode automatic differentiation.

A numpy array wrapped with a gradient slot and a closure that knows how to
push the upstream gradient into its parents. Graph construction is implicit:
every op records its inputs, and ``Tensor.backward`` replays the recorded
graph in reverse topological order, then drops it.

Broadcasting is restricted to trailing dimensions: two operands must have
equal shapes, or one shape must be a suffix of the other.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_state = {"dtype": np.dtype(np.float32), "grad": True}


class DimensionError(ValueError):
    pass


def default_dtype() -> np.dtype:
    return _state["dtype"]


def set_default_dtype(dtype) -> None:
    _state["dtype"] = np.dtype(dtype)


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype of newly created tensors (e.g. float64 for gradient checks)."""
    prev = _state["dtype"]
    _state["dtype"] = np.dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = prev


@contextlib.contextmanager
def no_grad():
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


def is_grad_enabled() -> bool:
    return _state["grad"]


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str = "",
                 _parents: tuple = (), _op: str = ""):
        arr = np.asarray(data)
        if arr.dtype.kind != "f" or not isinstance(data, np.ndarray):
            # python numbers and lists follow the active precision; arrays keep theirs
            arr = arr.astype(default_dtype())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = _op

    # -- construction helpers -------------------------------------------------

    @classmethod
    def zeros(cls, *shape, requires_grad=False, name=""):
        return cls(np.zeros(shape, dtype=default_dtype()), requires_grad, name)

    @classmethod
    def ones(cls, *shape, requires_grad=False, name=""):
        return cls(np.ones(shape, dtype=default_dtype()), requires_grad, name)

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
        return float(self.data)

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- gradient bookkeeping -------------------------------------------------

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if g.shape != self.data.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def _accum_at(self, index, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        if _is_basic_index(index):
            self.grad[index] += g
        else:
            np.add.at(self.grad, index, g)

    def backward(self) -> None:
        """Populate ``.grad`` of every requires_grad tensor reachable from this scalar."""
        if self.data.size != 1 or self.data.ndim > 1 and any(d != 1 for d in self.shape):
            raise ValueError(f"backward() needs a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that is not part of a differentiable graph")
        order = _topological_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node in order:
            # the graph is single-use; drop closures so activations can be freed
            if node._parents:
                node._parents = ()
                node._backward = None
                if node is not self:
                    node.grad = None

    # -- operators ------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis: int):
        return tmax(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=default_dtype()))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    needs = _state["grad"] and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _op=op)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_broadcast(a: tuple, b: tuple, op: str) -> tuple:
    if a == b:
        return a
    if len(a) >= len(b) and a[len(a) - len(b):] == b:
        return a
    if len(b) > len(a) and b[len(b) - len(a):] == a:
        return b
    raise DimensionError(f"{op}: shapes {a} and {b} are not trailing-broadcastable")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    return g


# -- elementwise ----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "add")

    def backward(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "sub")

    def backward(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(-_unbroadcast(g, b.shape))

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "mul")

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward, "mul")


def power(a: Tensor, p: float) -> Tensor:
    a = as_tensor(a)
    out_data = a.data ** p

    def backward(g):
        a._accum(g * p * a.data ** (p - 1))

    return _make(out_data, (a,), backward, "pow")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        a._accum(g * (1.0 - y * y))

    return _make(y, (a,), backward, "tanh")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)

    def backward(g):
        a._accum(g * y * (1.0 - y))

    return _make(y, (a,), backward, "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    y = np.where(mask, a.data, 0).astype(a.dtype)

    def backward(g):
        a._accum(g * mask)

    return _make(y, (a,), backward, "relu")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def backward(g):
        a._accum(g * y)

    return _make(y, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    def backward(g):
        a._accum(g / a.data)

    return _make(np.log(a.data), (a,), backward, "log")


# -- linear algebra -------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.

    ``a`` may carry leading batch dims. ``b`` is either a 2-D matrix shared by
    the whole batch or has exactly the same batch dims as ``a``. 1-D operands
    are promoted to a row (left) or a column (right) and squeezed afterwards.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError(f"matmul: scalar operand, shapes {a.shape} and {b.shape}")
    if a.ndim == 1:
        return reshape(matmul(reshape(a, (1,) + a.shape), b), b.shape[:-2] + b.shape[-1:])
    if b.ndim == 1:
        return reshape(matmul(a, reshape(b, b.shape + (1,))), a.shape[:-1])
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions disagree for shapes {a.shape} and {b.shape}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise DimensionError(f"matmul: batch dimensions disagree for shapes {a.shape} and {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accum(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            if b.ndim == 2:
                k, n = b.shape
                b._accum(a.data.reshape(-1, k).T @ g.reshape(-1, n))
            else:
                b._accum(np.swapaxes(a.data, -1, -2) @ g)

    return _make(a.data @ b.data, (a, b), backward, "matmul")


# -- reductions -----------------------------------------------------------------

def _norm_axes(axis, ndim) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    y = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        a._accum(np.broadcast_to(g, a.shape))

    return _make(np.asarray(y), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return mul(tsum(a, axes, keepdims), 1.0 / n)


def tmax(a: Tensor, axis: int) -> Tensor:
    """Max along one axis; the gradient goes to the first maximal entry."""
    axis = axis % a.ndim
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    y = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        a._accum(full)

    return _make(y, (a,), backward, "max")


# -- normalizations ------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.shape[axis] < 1:
        raise DimensionError("softmax over an empty axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x._accum(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def backward(g):
        x._accum(g - np.exp(y) * g.sum(axis=axis, keepdims=True))

    return _make(y, (x,), backward, "log_softmax")


# -- shape manipulation ---------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def backward(g):
        a._accum(g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), backward, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))

    def backward(g):
        a._accum(np.transpose(g, inv))

    return _make(np.transpose(a.data, axes), (a,), backward, "transpose")


def getitem(a: Tensor, index) -> Tensor:
    y = a.data[index]
    if not _is_basic_index(index):
        y = np.array(y, copy=True)
    y = np.asarray(y)

    def backward(g):
        a._accum_at(index, g)

    return _make(y, (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
                t.shape[d] != tensors[0].shape[d] for d in range(t.ndim) if d != axis):
            raise DimensionError(f"concat: incompatible shapes {[x.shape for x in tensors]}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: shapes differ {sorted(shapes)}")
    data = np.stack([t.data for t in tensors], axis=axis)
    axis = axis % data.ndim

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accum(np.take(g, i, axis=axis))

    return _make(data, tensors, backward, "stack")


def unbind(a: Tensor, axis: int = 0) -> list[Tensor]:
    """Split along ``axis`` into views whose gradients land in place in the parent."""
    axis = axis % a.ndim
    out = []
    for i in range(a.shape[axis]):
        sl = [slice(None)] * a.ndim
        sl[axis] = i
        out.append(getitem(a, tuple(sl)))
    return out


def repeat_axis(a: Tensor, axis: int, n: int) -> Tensor:
    """Insert a new axis at ``axis`` and tile ``n`` copies along it."""
    y = np.repeat(np.expand_dims(a.data, axis), n, axis=axis)

    def backward(g):
        a._accum(g.sum(axis=axis))

    return _make(y, (a,), backward, "repeat")


def flip(a: Tensor, axis: int) -> Tensor:
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(None, None, -1)
    return getitem(a, tuple(sl))


# -- time-distributed convolution and pooling along the feature axis -------------

def conv1d_features(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Same-padded 1-D convolution along axis -2 of ``x`` (shape ``(..., F, C_in)``).

    ``w`` has shape ``(k, C_in, C_out)``; every leading index (batch, time)
    shares the same kernel.
    """
    k, cin, cout = w.shape
    if x.shape[-1] != cin:
        raise DimensionError(f"conv1d: input channels {x.shape[-1]} != kernel channels {cin} "
                             f"(shapes {x.shape} and {w.shape})")
    lead = x.shape[:-2]
    F = x.shape[-2]
    left = (k - 1) // 2
    right = k - 1 - left
    pad = [(0, 0)] * (x.ndim - 2) + [(left, right), (0, 0)]
    xp = np.pad(x.data, pad)
    # (..., F, C_in, k) -> (N*F, k*C_in) with kernel offset major
    win = sliding_window_view(xp, k, axis=-2)
    cols = np.ascontiguousarray(np.moveaxis(win, -1, -2)).reshape(-1, k * cin)
    wm = w.data.reshape(k * cin, cout)
    y = (cols @ wm).reshape(lead + (F, cout))
    if b is not None:
        y = y + b.data

    def backward(g):
        g2 = g.reshape(-1, cout)
        if w.requires_grad:
            w._accum((cols.T @ g2).reshape(k, cin, cout))
        if b is not None and b.requires_grad:
            b._accum(g2.sum(axis=0))
        if x.requires_grad:
            dcols = (g2 @ wm.T).reshape(lead + (F, k, cin))
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            for j in range(k):
                dxp[..., j:j + F, :] += dcols[..., j, :]
            x._accum(dxp[..., left:left + F, :])

    parents = (x, w) if b is None else (x, w, b)
    return _make(y, parents, backward, "conv1d")


def pool_features(x: Tensor, size: int, mode: str = "max") -> Tensor:
    """Non-overlapping pooling along axis -2 with ceil semantics (F' = ceil(F/size))."""
    F = x.shape[-2]
    out_f = -(-F // size)
    if out_f < 1:
        raise DimensionError(f"pooling {F} features with size {size} leaves nothing")
    extra = out_f * size - F
    lead = x.shape[:-2]
    C = x.shape[-1]
    if mode == "max":
        fill = -np.inf
    elif mode == "avg":
        fill = 0.0
    else:
        raise ValueError(f"unknown pooling mode {mode!r}")
    pad = [(0, 0)] * (x.ndim - 2) + [(0, extra), (0, 0)]
    xp = np.pad(x.data, pad, constant_values=fill).reshape(lead + (out_f, size, C))
    if mode == "max":
        y = xp[..., 0, :]
        for j in range(1, size):
            y = np.maximum(y, xp[..., j, :])
    else:
        counts = np.full(out_f, size, dtype=x.dtype)
        counts[-1] = size - extra
        y = xp.sum(axis=-2) / counts[:, None]

    def backward(g):
        full = np.zeros(xp.shape, dtype=g.dtype)
        if mode == "max":
            # first maximal position in each pool receives the gradient
            free = np.ones(y.shape, dtype=bool)
            for j in range(size):
                hit = xp[..., j, :] == y
                hit &= free
                np.copyto(full[..., j, :], g, where=hit)
                free &= ~hit
        else:
            full[...] = np.expand_dims(g / counts[:, None], -2)
        full = full.reshape(lead + (out_f * size, C))
        x._accum(full[..., :F, :] if extra else full)

    return _make(y.astype(x.dtype, copy=False), (x,), backward, f"{mode}pool")


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Training-mode batch normalization over all leading axes, per channel.

    Returns the output and the batch mean / biased variance for running statistics.
    """
    C = x.shape[-1]
    x2 = x.data.reshape(-1, C)
    n = x2.shape[0]
    mu = x2.mean(axis=0)
    centered = x2 - mu
    var = (centered * centered).mean(axis=0)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = centered * inv
    y = (xhat * gamma.data + beta.data).reshape(x.shape)

    def backward(g):
        g2 = g.reshape(-1, C)
        if gamma.requires_grad:
            gamma._accum((g2 * xhat).sum(axis=0))
        if beta.requires_grad:
            beta._accum(g2.sum(axis=0))
        if x.requires_grad:
            dxhat = g2 * gamma.data
            dx = (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0)) * inv
            x._accum(dx.reshape(x.shape))

    return _make(y, (x, gamma, beta), backward, "batchnorm"), mu, var


def parameters_grad_norm(params: Iterable[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))
