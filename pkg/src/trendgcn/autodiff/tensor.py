"""
Dense tensors with tape-free reverse-mode differentiation (NumPy backend).

Every differentiable op builds an output :class:`Tensor` that remembers its
parents and a closure mapping the output adjoint to one adjoint per parent.
``Tensor.backward`` orders the reachable ops topologically (the computation
record) and replays the closures in reverse, summing adjoints of shared
operands.

Ops preserve the floating dtype of their inputs, so a model built from
float32 parameters trains in float32 while the gradient oracles run the same
code in float64.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import ConfigError, ShapeError

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable recording of ops in the current thread."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """A dense real array that can take part in reverse-mode differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[BackwardFn] = None
        self.op = "leaf"
        self.name = name

    # -- construction -----------------------------------------------------
    @classmethod
    def _make(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.op = op
        needs = is_grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        if needs:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- array-like surface ------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return swapaxes(self, -1, -2)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- reverse mode -----------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf.

        Without ``grad`` the tensor must be a scalar and its own adjoint is 1.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar root, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.dtype).reshape(self.shape)
        self.grad = grad if self.grad is None else self.grad + grad
        if self._backward is None:
            return

        order = computation_record(self)
        adjoints = {id(self): grad}
        for node in reversed(order):
            g = adjoints.pop(id(node), None)
            if g is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._backward is None:
                    parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
                else:
                    key = id(parent)
                    prev = adjoints.get(key)
                    adjoints[key] = pg if prev is None else prev + pg

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def computation_record(root: Tensor) -> list:
    """Ops reachable from ``root`` in topological order (parents first).

    Each op appears exactly once; leaves are excluded.
    """
    order: list = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited or node._backward is None:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p._backward is not None and id(p) not in visited:
                stack.append((p, False))
    return order


# ---------------------------------------------------------------------------
# helpers

def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _coerce(a, b):
    if not isinstance(a, Tensor):
        a = as_tensor(a, like=b)
    if not isinstance(b, Tensor):
        b = as_tensor(b, like=a)
    return a, b


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data + b.data, (a, b),
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _broadcast_shape(a, b, "subtract")
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data - b.data, (a, b),
                        lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "subtract")


def mul(a, b) -> Tensor:
    """Hadamard (elementwise) product with broadcasting."""
    a, b = _coerce(a, b)
    _broadcast_shape(a, b, "hadamard")
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(ad * bd, (a, b), backward, "hadamard")


hadamard = mul


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor._make(x.data * x.dtype.type(c), (x,), lambda g: (g * g.dtype.type(c),), "scale")


def sigmoid(x: Tensor) -> Tensor:
    y = np.exp(-np.logaddexp(0, -x.data)).astype(x.dtype, copy=False)
    return Tensor._make(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return Tensor._make(y, (x,), lambda g: (g * (1 - y * y),), "tanh")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data >= 0
    s = x.dtype.type(slope)
    y = np.where(pos, x.data, x.data * s)
    return Tensor._make(y, (x,), lambda g: (np.where(pos, g, g * s),), "leaky_relu")


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    sign = np.sign(x.data)
    return Tensor._make(np.abs(x.data), (x,), lambda g: (g * sign,), "abs")


def log(x: Tensor, floor: Optional[float] = None) -> Tensor:
    """Natural log; with ``floor`` the argument is clamped from below first."""
    xd = x.data
    if floor is not None:
        keep = xd >= floor
        xd = np.maximum(xd, x.dtype.type(floor))
        return Tensor._make(np.log(xd), (x,), lambda g: (np.where(keep, g / xd, 0),), "log")
    return Tensor._make(np.log(xd), (x,), lambda g: (g / xd,), "log")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return Tensor._make(y, (x,), lambda g: (g * y,), "exp")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    y = np.clip(x.data, lo, hi)
    return Tensor._make(y, (x,), lambda g: (np.where(inside, g, 0),), "clip")


# ---------------------------------------------------------------------------
# reductions and structure

def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for a in axis:
        if not -ndim <= a < ndim:
            raise ShapeError(f"axis {a} out of range for a {ndim}-d tensor")
        out.append(a % ndim)
    return tuple(out)


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    ax = _norm_axis(axis, x.ndim)
    shape = x.shape
    y = np.sum(x.data, axis=ax, keepdims=keepdims)
    return Tensor._make(np.asarray(y), (x,), lambda g: (_expand_reduced(g, shape, ax, keepdims),), "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    ax = _norm_axis(axis, x.ndim)
    shape = x.shape
    count = x.size if ax is None else int(np.prod([shape[a] for a in ax]))
    y = np.mean(x.data, axis=ax, keepdims=keepdims)
    inv = x.dtype.type(1.0 / count)
    return Tensor._make(np.asarray(y, dtype=x.dtype), (x,),
                        lambda g: (_expand_reduced(g * inv, shape, ax, keepdims),), "mean")


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} into {tuple(shape)}") from None
    return Tensor._make(y, (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, perm: Optional[Sequence[int]] = None) -> Tensor:
    if perm is None:
        perm = tuple(reversed(range(x.ndim)))
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(x.ndim)):
        raise ShapeError(f"invalid permutation {perm} for a {x.ndim}-d tensor")
    inv = tuple(np.argsort(perm))
    return Tensor._make(np.transpose(x.data, perm), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    perm = list(range(x.ndim))
    perm[a], perm[b] = perm[b], perm[a]
    return transpose(x, perm)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat along axis {axis}: extent mismatch between "
                             f"{tensors[0].shape} and {t.shape}")
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    y = np.concatenate([t.data for t in tensors], axis=ax)
    return Tensor._make(y, tensors, lambda g: tuple(np.split(g, splits, axis=ax)), "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack needs equal shapes, got {sorted(shapes)}")
    y = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return Tensor._make(y, tensors, backward, "stack")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(x: Tensor, idx) -> Tensor:
    shape, dtype = x.shape, x.dtype
    basic = _is_basic_index(idx)
    y = x.data[idx]

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return Tensor._make(np.array(y, copy=not basic) if basic else y, (x,), backward, "getitem")


# ---------------------------------------------------------------------------
# linear algebra and normalisation

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``a[..., m, k] @ b[..., k, n]`` with broadcast batch extents."""
    a, b = _coerce(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch extents not broadcastable: {a.shape} @ {b.shape}") from None
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(ad @ bd, (a, b), backward, "matmul")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    _norm_axis(axis, x.ndim)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._make(y, (x,), backward, "softmax")


def layer_norm(x: Tensor, gain: Optional[Tensor] = None, offset: Optional[Tensor] = None,
               axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalise to zero mean / unit variance along ``axis``, then apply ``gain`` and ``offset``.

    ``gain`` and ``offset`` are vectors of length ``x.shape[axis]``.
    """
    ax = _norm_axis(axis, x.ndim)[0]
    n = x.shape[ax]
    if n < 2:
        raise ShapeError(f"layer_norm over an axis of extent {n} is degenerate")
    bshape = [1] * x.ndim
    bshape[ax] = n
    xd = x.data
    mu = xd.mean(axis=ax, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=ax, keepdims=True)
    rstd = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * rstd
    parents = [x]
    gd = None
    if gain is not None:
        gd = gain.data.reshape(bshape)
        parents.append(gain)
    if offset is not None:
        parents.append(offset)
    y = xhat if gd is None else xhat * gd
    if offset is not None:
        y = y + offset.data.reshape(bshape)
    other = tuple(i for i in range(x.ndim) if i != ax)

    def backward(g):
        dxhat = g if gd is None else g * gd
        m1 = dxhat.mean(axis=ax, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=ax, keepdims=True)
        grads = [rstd * (dxhat - m1 - xhat * m2)]
        if gain is not None:
            grads.append((g * xhat).sum(axis=other).reshape(gain.shape))
        if offset is not None:
            grads.append(g.sum(axis=other).reshape(offset.shape))
        return grads

    return Tensor._make(y, parents, backward, "layer_norm")


# ---------------------------------------------------------------------------
# dropout

class CounterRNG:
    """Counter-based random stream: draw ``k`` uses Philox keyed by (seed, k).

    Resetting the counter replays exactly the same masks, which is what the
    finite-difference oracles rely on when dropout is active.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.counter = 0

    def next_generator(self) -> np.random.Generator:
        gen = np.random.Generator(np.random.Philox(key=self.seed, counter=self.counter))
        self.counter += 1
        return gen

    def reset(self, counter: int = 0) -> None:
        self.counter = counter


def dropout(x: Tensor, rate: float, training: bool = True, seed=None) -> Tensor:
    """Inverted dropout. ``seed`` is an int or a :class:`CounterRNG`."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if isinstance(seed, CounterRNG):
        gen = seed.next_generator()
    else:
        gen = np.random.Generator(np.random.Philox(key=0 if seed is None else int(seed)))
    keep = gen.random(x.shape) >= rate
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    return Tensor._make(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def parameters_of(tensors: Iterable[Tensor]) -> list:
    return [t for t in tensors if t.requires_grad]
