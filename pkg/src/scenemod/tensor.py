"""Reverse-mode automatic differentiation over dense numpy arrays.

Every operation returns a new :class:`Tensor` that remembers its parents and
a closure mapping the output gradient to parent gradients.  ``backward``
walks the recorded graph in reverse topological order and accumulates
gradients into leaf tensors created with ``requires_grad=True``.

Arrays default to float32; :func:`default_dtype` switches to float64 for
finite-difference checks.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_state = {"dtype": np.float32, "grad": True}


class ShapeMismatch(ValueError):
    pass


class AllMaskedRow(ValueError):
    pass


class NonScalarLoss(ValueError):
    pass


def get_default_dtype():
    return _state["dtype"]


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _state["dtype"] = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    old = _state["dtype"]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def no_grad():
    """Run operations without recording a computation graph."""
    old = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = old


def grad_enabled() -> bool:
    return _state["grad"]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, (np.ndarray, np.generic)) and dtype is None and data.dtype.kind == "f":
            # numpy scalars (e.g. the sum of two 0-d arrays) keep their precision
            arr = np.asarray(data)
        else:
            arr = np.asarray(data, dtype=dtype or _state["dtype"])
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.parents: tuple = ()
        self.backward_fn = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=_state["dtype"]), requires_grad=requires_grad, name=name)


def _wrap(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_state["dtype"]))


def _result(data: np.ndarray, parents: tuple, fn: Callable) -> Tensor:
    out = Tensor(data)
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ----------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data

    def fn(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _result(ad * bd, (a, b), fn)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)  # a numpy float64 scalar would promote float32 data
    return _result(a.data * c, (a,), lambda g: (g * c,))


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _result(t, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _result(np.where(pos, a.data, 0).astype(a.data.dtype), (a,), lambda g: (g * pos,))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return _result(e, (a,), lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _result(np.log(x), (a,), lambda g: (g / x,))


# ----------------------------------------------------------------------------
# linear algebra and shape


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul needs operands with at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeMismatch(f"matmul batch dims: {a.shape} @ {b.shape}") from None
    ad, bd = a.data, b.data

    def fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _result(ad @ bd, (a, b), fn)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {exc}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def fn(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _result(out, tuple(tensors), fn)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)

    def fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _result(out, tuple(tensors), fn)


def _is_basic(key) -> bool:
    if not isinstance(key, tuple):
        key = (key,)
    return all(isinstance(k, (int, np.integer, slice)) or k is None or k is Ellipsis for k in key)


def index(a: Tensor, key) -> Tensor:
    """Slicing / fancy indexing with a scatter-add backward."""
    shape, dtype = a.shape, a.data.dtype
    basic = _is_basic(key)

    def fn(g):
        gx = np.zeros(shape, dtype=dtype)
        if basic:
            gx[key] = g
        else:
            np.add.at(gx, key, g)
        return (gx,)

    return _result(a.data[key], (a,), fn)


def take(a: Tensor, ids, axis: int = 0) -> Tensor:
    """Gather slices of ``a`` along ``axis``; ids may repeat."""
    ids = np.asarray(ids, dtype=np.int64)
    shape, dtype = a.shape, a.data.dtype

    def fn(g):
        gx = np.zeros(shape, dtype=dtype)
        if axis == 0:
            np.add.at(gx, ids, g)
        else:
            np.add.at(np.moveaxis(gx, axis, 0), ids, np.moveaxis(g, axis, 0))
        return (gx,)

    return _result(np.take(a.data, ids, axis=axis), (a,), fn)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; output shape ``ids.shape + (dim,)``."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeMismatch(f"embedding id out of range for table of {table.shape[0]} rows")
    rows, dim = table.shape
    dtype = table.data.dtype

    def fn(g):
        flat = ids.reshape(-1)
        gx = np.zeros((rows, dim), dtype=dtype)
        if flat.size:
            np.add.at(gx, flat, g.reshape(-1, dim))
        return (gx,)

    return _result(table.data[ids], (table,), fn)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(tsum(a, axis, keepdims), 1.0 / n)


# ----------------------------------------------------------------------------
# normalisation and losses


def masked_softmax(x: Tensor, mask, axis: int = -1) -> Tensor:
    """Softmax over ``axis`` restricted to positions where ``mask`` is true.

    Masked positions come out exactly zero.  ``mask`` must broadcast to the
    logits' shape, and every row needs at least one visible entry.
    """
    mask = np.asarray(mask, dtype=bool)
    try:
        mask = np.broadcast_to(mask, x.shape)
    except ValueError:
        raise ShapeMismatch(f"mask {mask.shape} vs logits {x.shape}") from None
    if not mask.any(axis=axis).all():
        raise AllMaskedRow("masked_softmax: a row has no visible entries")
    z = np.where(mask, x.data, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _result(s, (x,), fn)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return masked_softmax(x, np.ones(x.shape, dtype=bool), axis)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def fn(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply the affine ``gamma``/``beta``."""
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise ShapeMismatch(f"layer_norm: affine {gamma.shape} for input {x.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    n = xd.shape[-1]

    def fn(g):
        gx = gg = gb = None
        if x.requires_grad:
            gh = g * gd
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        if gamma.requires_grad:
            gg = (g * xhat).reshape(-1, n).sum(axis=0)
        if beta.requires_grad:
            gb = g.reshape(-1, n).sum(axis=0)
        return gx, gg, gb

    return _result(xhat * gd + beta.data, (x, gamma, beta), fn)


def cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Summed negative log-likelihood of integer ``targets`` under ``logits``.

    ``weights`` (same shape as targets) zeroes out padding positions.
    Returns a scalar tensor.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ShapeMismatch(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    dtype = logits.data.dtype
    w = np.ones(targets.shape, dtype=dtype) if weights is None else np.asarray(weights, dtype=dtype)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * w).sum()

    def fn(g):
        p = np.exp(logp)
        np.put_along_axis(p, targets[..., None], np.take_along_axis(p, targets[..., None], -1) - 1.0, -1)
        return (p * (w[..., None] * g),)

    return _result(np.asarray(loss, dtype=dtype), (logits,), fn)


# ----------------------------------------------------------------------------
# driver


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise NonScalarLoss(f"backward needs a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for p, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            k = id(p)
            if k in grads:
                grads[k] = grads[k] + pg
            else:
                grads[k] = pg


def grad_check(f: Callable[..., Tensor], inputs: Iterable[Tensor], eps: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps ``inputs`` to a scalar tensor.  All inputs must be float64 leaf
    tensors; they are perturbed in place and restored.  The numeric estimate
    uses the five-point central stencil, whose O(eps^4) truncation error lets
    ``eps`` stay large enough that cancellation noise does not swamp small
    gradients.
    """
    inputs = list(inputs)
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValueError("grad_check requires float64 inputs")
        t.requires_grad = True
        t.zero_grad()
    backward(f(*inputs))
    worst = 0.0
    with no_grad():
        for t in inputs:
            analytic = t.grad.reshape(-1).copy()
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                vals = []
                for k in (2, 1, -1, -2):
                    flat[i] = orig + k * eps
                    vals.append(float(f(*inputs).data))
                flat[i] = orig
                num = (8 * (vals[1] - vals[2]) - (vals[0] - vals[3])) / (12 * eps)
                a = float(analytic[i])
                worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-8))
    return worst
