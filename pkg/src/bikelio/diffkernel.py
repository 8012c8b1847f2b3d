"""Small float64 tensor kernel with reverse-mode differentiation.

Only the layers the velocity network needs are provided. Every operation
that touches a tensor with ``requires_grad`` is appended to the active
:class:`Tape`; :func:`backward` walks that record in reverse.

Typical use::

    with Tape() as tape:
        y = gelu(linear(x, W, b))
        loss = y.sum()
    backward(tape, loss)
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

GELU_C = 0.7978845608
GELU_A = 0.044715


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    # operator sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Tape:
    """Execution-ordered record of differentiable operations."""

    _active: list["Tape"] = []

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        Tape._active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._active.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def current(cls) -> "Tape | None":
        return cls._active[-1] if cls._active else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
        tape = Tape.current()
        if tape is not None:
            tape.nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_trailing(name: str, x: Tensor, n: int, what: str) -> None:
    if x.ndim == 0 or x.shape[-1] != n:
        raise ShapeError(f"{name}: trailing extent of x {x.shape} != {what} ({n})")


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), fn)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), fn)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: x._accumulate(g * out))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.log(x.data), (x,), lambda g: x._accumulate(g / x.data))


def square(x) -> Tensor:
    x = as_tensor(x)
    return _make(x.data * x.data, (x,), lambda g: x._accumulate(2.0 * g * x.data))


def gelu(x) -> Tensor:
    """tanh-approximated GELU."""
    x = as_tensor(x)
    d = x.data
    u = GELU_C * (d + GELU_A * d ** 3)
    t = np.tanh(u)
    out = 0.5 * d * (1.0 + t)

    def fn(g):
        du = GELU_C * (1.0 + 3.0 * GELU_A * d * d)
        x._accumulate(g * (0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * du))

    return _make(out, (x,), fn)


# ---------------------------------------------------------------- reductions / shape

def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape))

    return _make(out, (x,), fn)


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / float(n))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: x._accumulate(g.reshape(x.shape)))


def transpose(x, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes; default swaps the last two."""
    x = as_tensor(x)
    if axes is None:
        axes = list(range(x.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,),
                 lambda g: x._accumulate(np.transpose(g, inv)))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]

    def fn(g):
        for x, part in zip(xs, np.split(g, cuts, axis=axis)):
            if x.requires_grad:
                x._accumulate(part)

    return _make(np.concatenate([x.data for x in xs], axis=axis), xs, fn)


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)

    def fn(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        x._accumulate(full)

    return _make(x.data[idx], (x,), fn)


def scatter_rows(x, rows: np.ndarray, n: int) -> Tensor:
    """Place ``x[k]`` at row ``rows[k]`` of a zero tensor with ``n`` rows (rows are summed)."""
    x = as_tensor(x)
    rows = np.asarray(rows, dtype=np.intp)
    out = np.zeros((n,) + x.shape[1:])
    np.add.at(out, rows, x.data)
    return _make(out, (x,), lambda g: x._accumulate(g[rows]))


# ---------------------------------------------------------------- layers

def linear(x, W, b) -> Tensor:
    """``x @ W + b`` over the trailing axis of ``x``."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.ndim != 2 or b.shape != (W.shape[1],):
        raise ShapeError(f"linear: bad parameter shapes W{W.shape} b{b.shape}")
    _check_trailing("linear", x, W.shape[0], f"W{W.shape} in")
    out = x.data @ W.data + b.data

    def fn(g):
        if x.requires_grad:
            x._accumulate(g @ W.data.T)
        if W.requires_grad:
            x2 = x.data.reshape(-1, W.shape[0])
            W._accumulate(x2.T @ g.reshape(-1, W.shape[1]))
        if b.requires_grad:
            b._accumulate(g.reshape(-1, W.shape[1]).sum(axis=0))

    return _make(out, (x, W, b), fn)


def conv1d_k1(x, W, b) -> Tensor:
    """Kernel-size-1 convolution: ``x[..., C_in, T] -> [..., C_out, T]``."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.ndim != 2 or b.shape != (W.shape[0],):
        raise ShapeError(f"conv1d_k1: bad parameter shapes W{W.shape} b{b.shape}")
    if x.ndim < 2 or x.shape[-2] != W.shape[1]:
        raise ShapeError(f"conv1d_k1: channel extent of x {x.shape} != W{W.shape} C_in")
    out = np.matmul(W.data, x.data) + b.data[:, None]

    def fn(g):
        if x.requires_grad:
            x._accumulate(np.matmul(W.data.T, g))
        if W.requires_grad:
            gw = np.matmul(g, np.swapaxes(x.data, -1, -2))
            W._accumulate(gw.reshape(-1, *W.shape).sum(axis=0))
        if b.requires_grad:
            b._accumulate(g.reshape(-1, W.shape[0], g.shape[-1]).sum(axis=(0, 2)))

    return _make(out, (x, W, b), fn)


def affine_scale_shift(x, alpha, beta) -> Tensor:
    """``alpha * x + beta`` per trailing-axis column."""
    x, alpha, beta = as_tensor(x), as_tensor(alpha), as_tensor(beta)
    d = alpha.shape[0] if alpha.ndim == 1 else -1
    if alpha.ndim != 1 or beta.shape != alpha.shape:
        raise ShapeError(f"affine: bad parameter shapes alpha{alpha.shape} beta{beta.shape}")
    _check_trailing("affine", x, d, "len(alpha)")
    out = x.data * alpha.data + beta.data

    def fn(g):
        if x.requires_grad:
            x._accumulate(g * alpha.data)
        if alpha.requires_grad:
            alpha._accumulate((g * x.data).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, d).sum(axis=0))

    return _make(out, (x, alpha, beta), fn)


def global_avg_pool(x) -> Tensor:
    """Mean over the last axis: ``[..., C, T] -> [..., C]``."""
    x = as_tensor(x)
    if x.ndim < 1 or x.shape[-1] == 0:
        raise ShapeError(f"global_avg_pool: empty time axis in {x.shape}")
    T = x.shape[-1]
    return _make(x.data.mean(axis=-1), (x,),
                 lambda g: x._accumulate(np.repeat(g[..., None] / T, T, axis=-1)))


def softmax(x) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        x._accumulate(out * (g - (g * out).sum(axis=-1, keepdims=True)))

    return _make(out, (x,), fn)


# ---------------------------------------------------------------- autodiff driver

def _topo(loss: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


def backward(tape: Tape | None, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf with ``requires_grad``.

    Leaves that the loss does not reach keep ``grad`` unchanged (``None`` reads as zero).
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if tape is None:
        nodes = _topo(loss)
    else:
        nodes = list(tape.nodes)
        if not any(n is loss for n in nodes):
            raise ValueError("backward: loss was not produced on this tape")
    # intermediates hold grads only for the duration of this pass
    for n in nodes:
        if n._parents:
            n.grad = None
    loss.grad = np.ones_like(loss.data)
    reached = {id(loss)}
    for node in reversed(nodes):
        if id(node) not in reached or node.grad is None:
            continue
        node._backward(node.grad)
        for p in node._parents:
            reached.add(id(p))
    for n in nodes:
        if n._parents:
            n.grad = None


# ---------------------------------------------------------------- optimisation

class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)
