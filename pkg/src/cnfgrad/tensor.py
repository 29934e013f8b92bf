"""Dense float64 tensors with a reverse-mode gradient tape.

The op set is deliberately small: elementwise arithmetic with a single
broadcasting pattern (a length-n vector against the rows of an m x n
matrix), matrix products, last-axis reductions that squeeze the reduced
axis, the usual activations, and the threshold nodes whose backward pass
substitutes a straight-through surrogate (identity or saturated) or the
analytic sawtooth-gate gradient.

Gradients accumulate in the reverse of node-creation order, which is a
topological order by construction, so repeated runs are bit-identical.
Indicator outputs are constants: no gradient ever flows through them.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested op."""


class GraphError(RuntimeError):
    """The gradient graph was used in an unsupported way."""


class SteMode(Enum):
    """Surrogate used in the backward pass of a hard threshold.

    ISTE passes the upstream gradient unchanged; SSTE multiplies it by the
    box mask of [-1, 1].
    """

    ISTE = "i"
    SSTE = "s"

    @classmethod
    def parse(cls, text: str) -> "SteMode":
        for mode in cls:
            if text in (mode.value, mode.name.lower(), mode.name):
                return mode
        raise ValueError(f"unknown STE mode {text!r} (use 'i' or 's')")


@dataclass(frozen=True)
class TgfConfig:
    """Sawtooth gate: b(x) + s_K(x) * g(x) with s_K(x) = (Kx - floor(Kx)) / K.

    g_mode 'one' makes the analytic gradient 1 everywhere (identity
    surrogate); 'box' makes it the indicator of [-1, 1] (saturated
    surrogate). At grid points (Kx integral) the right-limit derivative 1
    is used so the gradient is total.
    """

    k: float
    g_mode: str = "one"

    def __post_init__(self) -> None:
        if not self.k > 0:
            raise ValueError(f"tgf scale must be positive, got {self.k}")
        if self.g_mode not in ("one", "box"):
            raise ValueError(f"tgf g_mode must be 'one' or 'box', got {self.g_mode!r}")


_ids = itertools.count()


class Tensor:
    """A dense float64 array plus an optional backward record.

    Leaves carry data only; interior nodes remember their parents and a
    closure that routes the output gradient to them. ``requires_grad``
    marks leaves whose gradient should be retained (model parameters).
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_id", "_spent")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        backward: Callable[[np.ndarray], None] | None = None,
        op: str = "leaf",
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = tuple(parents)
        self._backward = backward
        self._id = next(_ids)
        self._spent = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape}, data={self.data!r})"

    # -- operator sugar (scalars allowed on either side) --

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value) -> Tensor:
    """Wrap scalars/arrays as constant leaves; pass tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def constant(value) -> Tensor:
    """A constant leaf (copy of the input, no gradient)."""
    return Tensor(np.array(value, dtype=np.float64))


def _acc(t: Tensor, g: np.ndarray) -> None:
    # Constants were never given a grad buffer; skip them.
    if t.grad is not None:
        t.grad += g


# -- elementwise arithmetic -------------------------------------------------

def _pair_shapes(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or sa == () or sb == ():
        return
    if len(sa) == 2 and sb == (sa[1],):
        return
    if len(sb) == 2 and sa == (sb[1],):
        return
    raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return g.sum()
    # length-n vector broadcast against the rows of an (m, n) result
    return g.sum(axis=0)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _pair_shapes(a, b, "add")
    out = Tensor(a.data + b.data, parents=(a, b), op="add")

    def back(g: np.ndarray) -> None:
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(g, b.shape))

    out._backward = back
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _pair_shapes(a, b, "sub")
    out = Tensor(a.data - b.data, parents=(a, b), op="sub")

    def back(g: np.ndarray) -> None:
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(-g, b.shape))

    out._backward = back
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _pair_shapes(a, b, "mul")
    out = Tensor(a.data * b.data, parents=(a, b), op="mul")

    def back(g: np.ndarray) -> None:
        _acc(a, _unbroadcast(g * b.data, a.shape))
        _acc(b, _unbroadcast(g * a.data, b.shape))

    out._backward = back
    return out


def square(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data * x.data, parents=(x,), op="square")

    def back(g: np.ndarray) -> None:
        _acc(x, 2.0 * x.data * g)

    out._backward = back
    return out


# -- matrix products --------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    if not (1 <= len(sa) <= 2 and 1 <= len(sb) <= 2) or sa[-1] != sb[0]:
        raise ShapeError(f"matmul: incompatible shapes {sa} and {sb}")
    out = Tensor(a.data @ b.data, parents=(a, b), op="matmul")

    def back(g: np.ndarray) -> None:
        if len(sa) == 2 and len(sb) == 2:
            _acc(a, g @ b.data.T)
            _acc(b, a.data.T @ g)
        elif len(sa) == 1 and len(sb) == 2:
            _acc(a, b.data @ g)
            _acc(b, np.outer(a.data, g))
        elif len(sa) == 2 and len(sb) == 1:
            _acc(a, np.outer(g, b.data))
            _acc(b, a.data.T @ g)
        else:  # 1-D dot product
            _acc(a, g * b.data)
            _acc(b, g * a.data)

    out._backward = back
    return out


# -- shape plumbing ---------------------------------------------------------

def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    out = Tensor(x.data.reshape(shape), parents=(x,), op="reshape")

    def back(g: np.ndarray) -> None:
        _acc(x, g.reshape(x.shape))

    out._backward = back
    return out


def concat(parts: Iterable) -> Tensor:
    """Concatenate 1-D tensors into one vector."""
    parts = [as_tensor(p) for p in parts]
    for p in parts:
        if len(p.shape) != 1:
            raise ShapeError(f"concat: only 1-D tensors supported, got shape {p.shape}")
    out = Tensor(np.concatenate([p.data for p in parts]) if parts else np.zeros(0), parents=tuple(parts), op="concat")
    offsets = np.cumsum([0] + [p.size for p in parts])

    def back(g: np.ndarray) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _acc(p, g[lo:hi])

    out._backward = back
    return out


# -- activations ------------------------------------------------------------

def relu(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0), parents=(x,), op="relu")

    def back(g: np.ndarray) -> None:
        _acc(x, g * (x.data > 0.0))

    out._backward = back
    return out


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient is the closed-interval box mask."""
    x = as_tensor(x)
    out = Tensor(np.clip(x.data, lo, hi), parents=(x,), op="clip")
    mask = (x.data >= lo) & (x.data <= hi)

    def back(g: np.ndarray) -> None:
        _acc(x, g * mask)

    out._backward = back
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    val = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = Tensor(val, parents=(x,), op="sigmoid")

    def back(g: np.ndarray) -> None:
        _acc(x, g * val * (1.0 - val))

    out._backward = back
    return out


def softmax(x) -> Tensor:
    """Softmax over the last axis; each slice along it sums to 1."""
    x = as_tensor(x)
    if x.shape == ():
        raise ShapeError("softmax: scalar input")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    val = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(val, parents=(x,), op="softmax")

    def back(g: np.ndarray) -> None:
        inner = (g * val).sum(axis=-1, keepdims=True)
        _acc(x, val * (g - inner))

    out._backward = back
    return out


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise ValueError("log: input must be strictly positive")
    out = Tensor(np.log(x.data), parents=(x,), op="log")

    def back(g: np.ndarray) -> None:
        _acc(x, g / x.data)

    out._backward = back
    return out


def cross_entropy(logits, onehot) -> Tensor:
    """Mean softmax cross-entropy between logit rows and one-hot targets."""
    logits = as_tensor(logits)
    target = np.asarray(onehot.data if isinstance(onehot, Tensor) else onehot, dtype=np.float64)
    if logits.shape != target.shape or len(logits.shape) not in (1, 2):
        raise ShapeError(f"cross_entropy: shapes {logits.shape} and {target.shape}")
    t2 = target.reshape(-1, target.shape[-1])
    if not (np.all((t2 == 0.0) | (t2 == 1.0)) and np.all(t2.sum(axis=-1) == 1.0)):
        raise ValueError("cross_entropy: target rows must be one-hot")
    rows = t2.shape[0]
    z = logits.data.reshape(rows, -1)
    zmax = z.max(axis=-1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=-1))
    picked = (z * t2).sum(axis=-1)
    out = Tensor((lse - picked).mean(), parents=(logits,), op="cross_entropy")
    sm = np.exp(z - zmax)
    sm /= sm.sum(axis=-1, keepdims=True)

    def back(g: np.ndarray) -> None:
        _acc(logits, (g * (sm - t2) / rows).reshape(logits.shape))

    out._backward = back
    return out


# -- last-axis reductions (the reduced axis is squeezed) ---------------------

def _check_reducible(x: Tensor, op: str) -> None:
    if x.shape == ():
        raise ShapeError(f"{op}: scalar input has no axis to reduce")


def sum_last(x) -> Tensor:
    x = as_tensor(x)
    _check_reducible(x, "sum_last")
    out = Tensor(x.data.sum(axis=-1), parents=(x,), op="sum_last")

    def back(g: np.ndarray) -> None:
        _acc(x, np.broadcast_to(np.expand_dims(g, -1), x.shape).copy())

    out._backward = back
    return out


def avg_last(x) -> Tensor:
    """Mean over the last axis; an empty axis averages to 0.

    Computed as sum/n (not sum * (1/n)) so values like k/m are exact.
    """
    x = as_tensor(x)
    _check_reducible(x, "avg_last")
    n = x.shape[-1]
    val = x.data.sum(axis=-1) / n if n else x.data.sum(axis=-1)
    out = Tensor(val, parents=(x,), op="avg_last")

    def back(g: np.ndarray) -> None:
        if n:
            _acc(x, np.broadcast_to(np.expand_dims(g / n, -1), x.shape).copy())

    out._backward = back
    return out


def prod_last(x) -> Tensor:
    x = as_tensor(x)
    _check_reducible(x, "prod_last")
    out = Tensor(x.data.prod(axis=-1), parents=(x,), op="prod_last")
    # Exclusive left/right cumulative products: exact even with zero factors.
    d = x.data
    left = np.ones_like(d)
    right = np.ones_like(d)
    if d.shape[-1] > 1:
        left[..., 1:] = np.cumprod(d[..., :-1], axis=-1)
        right[..., :-1] = np.cumprod(d[..., :0:-1], axis=-1)[..., ::-1]
    partial = left * right

    def back(g: np.ndarray) -> None:
        _acc(x, np.expand_dims(g, -1) * partial)

    out._backward = back
    return out


# -- threshold nodes ---------------------------------------------------------

def indicator(x, k: float) -> Tensor:
    """1 where x equals k, else 0; a constant in the gradient graph."""
    x = as_tensor(x)
    return Tensor((x.data == k).astype(np.float64))


def binarize(x, fn: str, ste: SteMode = SteMode.ISTE) -> Tensor:
    """Hard threshold: 'b' at 0 on reals, 'bp' at 0.5 on probabilities.

    Ties go to 1. The backward pass applies the STE surrogate; for 'bp'
    inputs (already inside [-1, 1]) both surrogates coincide.
    """
    x = as_tensor(x)
    if fn == "b":
        val = (x.data >= 0.0).astype(np.float64)
    elif fn == "bp":
        if np.any((x.data < 0.0) | (x.data > 1.0)):
            raise ValueError("binarize: 'bp' input must lie in [0, 1]")
        val = (x.data >= 0.5).astype(np.float64)
    else:
        raise ValueError(f"binarize: unknown fn {fn!r} (use 'b' or 'bp')")
    out = Tensor(val, parents=(x,), op=f"binarize_{fn}")
    if ste is SteMode.SSTE:
        mask = (x.data >= -1.0) & (x.data <= 1.0)
    else:
        mask = None

    def back(g: np.ndarray) -> None:
        _acc(x, g if mask is None else g * mask)

    out._backward = back
    return out


def tgf(x, cfg: TgfConfig) -> Tensor:
    """Sawtooth-perturbed step; analytic gradient equals the STE surrogate."""
    x = as_tensor(x)
    k = cfg.k
    saw = (k * x.data - np.floor(k * x.data)) / k
    gvals = np.ones_like(x.data) if cfg.g_mode == "one" else ((x.data >= -1.0) & (x.data <= 1.0)).astype(np.float64)
    out = Tensor((x.data >= 0.0).astype(np.float64) + saw * gvals, parents=(x,), op="tgf")

    def back(g: np.ndarray) -> None:
        _acc(x, g * gvals)

    out._backward = back
    return out


# -- reverse pass ------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Run the reverse pass from a scalar loss.

    Populates ``grad`` on every reachable tensor that wants one. Interior
    nodes are single-use: a second backward through them raises.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")

    seen: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen[id(t)] = t
        if t.op != "leaf" and t._spent:
            raise GraphError("graph already consumed by a previous backward() call")
        stack.extend(t._parents)

    nodes = sorted(seen.values(), key=lambda t: t._id, reverse=True)
    for t in nodes:
        if t.op != "leaf":
            t.grad = np.zeros_like(t.data)
            t._spent = True
        elif t.requires_grad and t.grad is None:
            t.grad = np.zeros_like(t.data)
    loss.grad = np.ones_like(loss.data)
    for t in nodes:
        if t._backward is not None:
            t._backward(t.grad)
