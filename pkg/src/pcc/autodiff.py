"""Minimal reverse-mode differentiable arrays.

Only the operations the completion pipeline needs are provided.  Storage is
float32 by default; :func:`precision` switches the engine to float64 for
finite-difference checking.

Example::

    x = Tensor(np.ones((2, 3)), requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    x.grad  # 2 * x
"""
from __future__ import annotations

import contextlib
import zlib
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, ConfigError

_DTYPE = np.float32

# When not None, ops that make discrete choices (max, sign, selection) append a
# checksum of the choice here; gradient checks use it to skip kink crossings.
_branch_log: list | None = None

# Ops whose backward is deliberately corrupted (gradient-check fault injection).
_FAULTS: set[str] = set()


def default_dtype():
    return _DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the storage dtype for newly created tensors."""
    global _DTYPE
    old, _DTYPE = _DTYPE, np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = old


@contextlib.contextmanager
def record_branches():
    """Collect checksums of every discrete choice made by ops in the block."""
    global _branch_log
    old, _branch_log = _branch_log, []
    try:
        yield _branch_log
    finally:
        _branch_log = old


def record_branch(arr) -> None:
    if _branch_log is not None:
        a = np.ascontiguousarray(arr)
        _branch_log.append((a.shape, zlib.crc32(a.tobytes())))


@contextlib.contextmanager
def inject_fault(*ops: str):
    """Scale the backward of the named ops by 1.5 (test hook)."""
    added = [o for o in ops if o not in _FAULTS]
    _FAULTS.update(added)
    try:
        yield
    finally:
        _FAULTS.difference_update(added)


class Tensor:
    """Dense array with an optional gradient and a link to the op that made it."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=_DTYPE)
        # ascontiguousarray would promote 0-d results to shape (1,)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph traversal ----------------------------------------------------
    def backward(self) -> None:
        """Populate ``.grad`` on every reachable tensor that requires grad."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            pgrads = node._backward(g)
            if node.op in _FAULTS:
                pgrads = [None if pg is None else pg * 1.5 for pg in pgrads]
            for parent, pg in zip(node._parents, pgrads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar -----------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


DiffArray = Tensor


def _topo_order(root: Tensor) -> list[Tensor]:
    # iterative post-order DFS; parents visited in argument order -> deterministic
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
        for p in reversed(node._parents):
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    out.op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting rules)
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * out / b.data, b.shape)
        return ga, gb

    return _make(out, (a, b), backward, "div")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def sigmoid(x: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-x.data))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    """``x`` where ``x >= 0`` else ``slope * x``."""
    pos = x.data >= 0
    record_branch(pos)
    scale = np.where(pos, 1.0, slope).astype(x.data.dtype)
    return _make(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Join tensors along ``axis``; the gradient is split back into the parts."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat needs at least one part")
    ref = parts[0].shape
    ax = axis % len(ref)
    for p in parts[1:]:
        if p.ndim != len(ref) or any(p.shape[d] != ref[d] for d in range(len(ref)) if d != ax):
            raise DimensionError(
                f"concat along axis {axis}: extents {[q.shape for q in parts]} disagree off-axis"
            )
    if len(parts) == 1:
        return parts[0]
    sizes = [p.shape[ax] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=ax))

    return _make(np.concatenate([p.data for p in parts], axis=ax), parts, backward, "concat")


def index(x: Tensor, idx) -> Tensor:
    """Arbitrary numpy indexing; gradient scattered back with ``np.add.at``."""
    out = x.data[idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(out, (x,), backward, "index")


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """``x[idx]`` for a 2-D ``x`` and an integer array ``idx`` of any shape."""
    idx = np.asarray(idx, dtype=np.int64)
    out = x.data[idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        kernels.scatter_add_rows(gx, idx.reshape(-1), g.reshape(-1, x.shape[1]))
        return (gx,)

    return _make(out, (x,), backward, "gather_rows")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis, keepdims), 1.0 / float(n))


def max_(x: Tensor, axis: int) -> Tensor:
    """Maximum over one axis; the gradient goes to the first maximal entry."""
    if x.shape[axis] == 0:
        raise ContractError("max over an empty axis")
    arg = np.argmax(x.data, axis=axis)
    record_branch(arg)
    argx = np.expand_dims(arg, axis)
    out = np.take_along_axis(x.data, argx, axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, argx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _make(out, (x,), backward, "max")


def max_over_neighbors(x: Tensor) -> Tensor:
    """Reduce an N x K x C edge tensor to N x C by max over the K neighbours."""
    if x.ndim != 3:
        raise DimensionError(f"max_over_neighbors expects N x K x C, got {x.shape}")
    if x.shape[1] == 0:
        raise ContractError("max_over_neighbors: empty neighbourhood (K = 0)")
    return max_(x, axis=1)


# ---------------------------------------------------------------------------
# linear algebra and normalisation
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading axes (if any) are batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(np.matmul(a.data, b.data), (a, b), backward, "matmul")


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the row max."""
    if np.isnan(x.data).any():
        raise FloatingPointError("softmax_rows: NaN in input")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (x,), backward, "softmax")


def log_softmax_rows(x: Tensor) -> Tensor:
    if np.isnan(x.data).any():
        raise FloatingPointError("log_softmax_rows: NaN in input")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def backward(g):
        return (g - sm * g.sum(axis=-1, keepdims=True),)

    return _make(out, (x,), backward, "log_softmax")


def group_norm(x: Tensor, groups: int, scale: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Group normalisation of an R x C array, each row an independent sample.

    Channels are split into ``groups`` contiguous groups; each (row, group)
    slice is normalised to zero mean and unit variance, then the per-channel
    affine ``scale``/``shift`` is applied.
    """
    r, c = x.shape
    if groups < 1 or c % groups:
        raise ConfigError(f"group_norm: {c} channels not divisible into {groups} groups")
    n = c // groups
    xg = x.data.reshape(r, groups, n)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(r, c)
    out = xhat * scale.data + shift.data

    def backward(g):
        gscale = (g * xhat).sum(axis=0)
        gshift = g.sum(axis=0)
        dxh = (g * scale.data).reshape(r, groups, n)
        xh = xhat.reshape(r, groups, n)
        gx = inv / n * (n * dxh - dxh.sum(axis=2, keepdims=True) - xh * (dxh * xh).sum(axis=2, keepdims=True))
        return gx.reshape(r, c), gscale, gshift

    return _make(out, (x, scale, shift), backward, "group_norm")


def l2_normalize_rows(x: Tensor) -> Tensor:
    """Divide each row by its Euclidean norm; zero rows are a contract error."""
    norms = np.sqrt((x.data.astype(np.float64) ** 2).sum(axis=-1, keepdims=True))
    if np.any(norms == 0):
        raise ContractError("cannot normalise a zero-norm vector (cosine similarity undefined)")
    return x / sqrt(sum_(x * x, axis=-1, keepdims=True))


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
