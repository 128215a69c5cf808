"""Dense arrays with a reverse-mode gradient tape.

Operations record themselves on the innermost active :class:`Tape` whenever at
least one input requires a gradient. Calling :meth:`Tape.backward` replays the
recorded operations in reverse and accumulates gradients into leaf tensors.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (x * x).sum()
    >>> _ = tape.backward(loss)
    >>> x.grad
    array([2., 4.])
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float64
_local = threading.local()

# tanh-approximation constants for GELU
GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateRowError(ValueError):
    """A softmax row has every position masked."""


class ContractError(ValueError):
    """An operation was called outside its contract."""


class EvaluationError(ArithmeticError):
    """A function under gradient check produced a non-finite value."""


def set_default_dtype(dtype) -> None:
    """Switch the dtype new tensors are created with (float64 or float32)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float64, np.float32):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        if arr.dtype.kind != "f":
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; tapes nest and are thread-local, so parallel
    workers each keep their own.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.tapes.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, output: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        self.nodes.append(_Node(tuple(inputs), output, backward))
        self._produced.add(id(output))

    def backward(self, loss: Tensor) -> list[Tensor]:
        return backward(loss, self)


def _active_tape() -> Tape | None:
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


def _result(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward)
    return out


def backward(loss: Tensor, tape: Tape) -> list[Tensor]:
    """Populate ``.grad`` on every leaf reachable from ``loss``.

    Returns the leaves that received a gradient. Leaves that ``loss`` does not
    depend on keep ``grad`` untouched. Gradients accumulate into existing
    ``.grad`` arrays.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if id(loss) not in tape._produced and not loss.requires_grad:
        raise ContractError("loss is not reachable from the tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    if id(loss) not in tape._produced:
        leaves[id(loss)] = loss
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            grads[key] = grads[key] + gi if key in grads else gi
            if key not in tape._produced:
                leaves[key] = inp

    touched = []
    for key, leaf in leaves.items():
        g = grads[key]
        leaf.grad = np.array(g, dtype=leaf.data.dtype) if leaf.grad is None else leaf.grad + g
        touched.append(leaf)
    return touched


# -- broadcasting ---------------------------------------------------------------


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    # only equal shapes, scalars, or one shape being a trailing suffix of the other
    if a == b:
        return a
    if len(b) < len(a) and (len(b) == 0 or a[len(a) - len(b):] == b):
        return a
    if len(a) < len(b) and (len(a) == 0 or b[len(b) - len(a):] == a):
        return b
    raise ShapeError(f"cannot broadcast shapes {a} and {b}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if not shape:
        return np.asarray(g.sum())
    return g.reshape((-1,) + shape).sum(axis=0)


# -- elementwise -----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data

    def grad(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _result(ad * bd, (a, b), grad)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5 x (1 + tanh(c (x + a x^3)))."""
    xd = x.data
    inner = GELU_C * (xd + GELU_A * (xd * xd * xd))
    t = np.tanh(inner)
    y = 0.5 * xd * (1.0 + t)

    def grad(g):
        dinner = GELU_C * (1.0 + 3.0 * GELU_A * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return _result(y, (x,), grad)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


# -- shape -----------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError as err:
        raise ShapeError(f"cannot reshape {src} to {tuple(shape)}") from err
    return _result(y, (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes=()) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def _is_basic(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


def getitem(x: Tensor, index) -> Tensor:
    src, dtype = x.shape, x.data.dtype
    basic = _is_basic(index)

    def grad(g):
        full = np.zeros(src, dtype=dtype)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(x.data[index], (x,), grad)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as err:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in tensors]}") from err
    bounds = np.cumsum(sizes)[:-1]

    def grad(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(y, tensors, grad)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table`` (shape [V, d]) at integer ``ids``."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"id out of range for table with {table.shape[0]} rows")
    shape = table.shape

    def grad(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[-1]))
        return (full,)

    return _result(table.data[ids], (table,), grad)


def scatter_rows(x: Tensor, index: np.ndarray, n_rows: int) -> Tensor:
    """Place rows of ``x`` ([m, d]) at ``index`` in a zero matrix [n_rows, d]."""
    index = np.asarray(index, dtype=np.int64)
    if len(index) != x.shape[0] or len(set(index.tolist())) != len(index):
        raise ShapeError("scatter index must be unique and match the row count")
    y = np.zeros((n_rows,) + x.shape[1:], dtype=x.data.dtype)
    y[index] = x.data
    return _result(y, (x,), lambda g: (g[index],))


# -- reductions ------------------------------------------------------------------


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return _result(np.asarray(x.data.mean()), (x,), lambda g: (np.full(shape, g / n),))


# -- linear algebra ----------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` is either a plain matrix [k, n] shared across every leading index of
    ``a`` or carries the same leading axes as ``a``.
    """
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    shared = b.ndim == 2

    if shared and a.ndim > 2:
        lead = a.shape[:-1]
        y = (ad.reshape(-1, ad.shape[-1]) @ bd).reshape(lead + (bd.shape[-1],))
    else:
        y = ad @ bd

    def grad(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if shared:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _result(y, (a, b), grad)


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis. Masked (False) positions come out exactly 0."""
    xd = x.data
    if mask is None:
        z = xd - xd.max(axis=-1, keepdims=True)
        e = np.exp(z)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        if not mask.any(axis=-1).all():
            raise DegenerateRowError("softmax row has every position masked")
        z = np.where(mask, xd, -np.inf)
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), grad)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm params {gain.shape}/{bias.shape} do not match last axis {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    y = xhat * gd + bias.data

    def grad(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gd
            gx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        flat_g = g.reshape(-1, d)
        ggain = (flat_g * xhat.reshape(-1, d)).sum(axis=0) if gain.requires_grad else None
        gbias = flat_g.sum(axis=0) if bias.requires_grad else None
        return gx, ggain, gbias

    return _result(y, (x, gain, bias), grad)


# -- losses ------------------------------------------------------------------------


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy, computed from logits in a stable form."""
    z = logits.data
    t = np.asarray(targets, dtype=z.dtype).reshape(z.shape)
    n = z.size
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    p = _sigmoid(z)
    return _result(np.asarray(loss.mean()), (logits,), lambda g: (g * (p - t) / n,))


# -- gradient checking ---------------------------------------------------------------


def finite_difference_check(
    f: Callable,
    x: Tensor | Sequence[Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Largest relative gap between taped and central-difference gradients.

    ``f(x)`` must return a scalar tensor. ``x`` may be one tensor or a list of
    tensors (e.g. every parameter of a model). The error per coordinate is
    ``|g_analytic - g_fd| / max(1, |g_fd|)``. With ``max_coords`` set, a seeded
    random subset of coordinates is checked.
    """
    if h <= 0:
        raise ContractError("h must be positive")
    params = [x] if isinstance(x, Tensor) else list(x)
    saved = [(p.requires_grad, p.grad) for p in params]
    for p in params:
        p.data = np.ascontiguousarray(p.data)
        p.requires_grad = True
        p.grad = None
    try:
        with Tape() as tape:
            out = f(x)
        if not np.all(np.isfinite(out.data)):
            raise EvaluationError("f(x) is not finite")
        backward(out, tape)
        analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    finally:
        for p, (rg, g) in zip(params, saved):
            p.requires_grad = rg
            p.grad = g

    def value() -> float:
        v = f(x).data
        if not np.all(np.isfinite(v)):
            raise EvaluationError("f(x) is not finite at a perturbed point")
        return float(v)

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    if max_coords is not None and max_coords < len(coords):
        pick = np.random.default_rng(seed).choice(len(coords), size=max_coords, replace=False)
        coords = [coords[k] for k in sorted(pick)]

    worst = 0.0
    for i, j in coords:
        flat = params[i].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        up = value()
        flat[j] = orig - h
        down = value()
        flat[j] = orig
        fd = (up - down) / (2.0 * h)
        err = abs(analytic[i].reshape(-1)[j] - fd) / max(1.0, abs(fd))
        worst = max(worst, err)
    return worst
