"""Reverse-mode autodiff over numpy arrays.

A Tensor wraps an ndarray; every op below builds the output array eagerly and,
when gradients are enabled, records its inputs plus a closure that maps the
output gradient to input gradients. backward() walks the recorded graph once
in reverse topological order and accumulates into the `.grad` of leaf tensors.

Only float32/float64 data lives in Tensors. Integer data (pixel levels, color
indices) stays in plain numpy arrays and enters the graph through
embedding_lookup / gather_nll.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, fields, is_dataclass

import numpy as np

from .errors import DimensionError, VocabularyError

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (sampling, evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # Operator sugar; heavy lifting stays in the module-level ops.
    def __add__(self, other):
        if isinstance(other, (int, float)):
            return shift_constant(self, other)
        return add(self, other)

    def __radd__(self, other):
        return self.__add__(other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return shift_constant(self, -other)
        return add(self, scale(other, -1.0))


def _make(data: np.ndarray, parents, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into each reachable leaf's `.grad`.

    `loss` must be scalar. Repeated calls keep adding into `.grad`; callers
    reset with zero_grad / zero_grads between steps.
    """
    if loss.shape != ():
        raise DimensionError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # Iterative post-order DFS: children come after all their parents in `topo`.
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            # Leaf. Accumulate out-of-place: g may alias another pending gradient.
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in node._backward(g):
            if not parent.requires_grad:
                continue
            held = grads.get(id(parent))
            grads[id(parent)] = pg if held is None else held + pg


# ---------------------------------------------------------------------------
# primitive ops


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape)))

    return _make(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (broadcasting) product."""
    out = a.data * b.data

    def bwd(g):
        return (
            (a, _unbroadcast(g * b.data, a.data.shape)),
            (b, _unbroadcast(g * a.data, b.data.shape)),
        )

    return _make(out, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = a.data * a.data.dtype.type(s)

    def bwd(g):
        return ((a, g * s),)

    return _make(out, (a,), bwd)


def shift_constant(a: Tensor, c: float) -> Tensor:
    """a + c for a python scalar c; gradient passes through unchanged."""
    out = a.data + a.data.dtype.type(c)

    def bwd(g):
        return ((a, g),)

    return _make(out, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    A, B = a.data, b.data
    if A.ndim < 2 or B.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {A.shape} @ {B.shape}")
    if A.shape[-1] != B.shape[-2]:
        raise DimensionError(f"matmul inner extents disagree: {A.shape} @ {B.shape}")
    try:
        out = A @ B
    except ValueError as exc:
        raise DimensionError(f"matmul batch axes not broadcastable: {A.shape} @ {B.shape}") from exc

    def bwd(g):
        ga = _unbroadcast(g @ B.swapaxes(-1, -2), A.shape)
        gb = _unbroadcast(A.swapaxes(-1, -2) @ g, B.shape)
        return ((a, ga), (b, gb))

    return _make(out, (a, b), bwd)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)

    def bwd(g):
        return ((a, g * (a.data > 0)),)

    return _make(out, (a,), bwd)


def _softmax_data(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along `axis`. NaNs in the input propagate to the output."""
    y = _softmax_data(a.data, axis)

    def bwd(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return ((a, y * (g - inner)),)

    return _make(y, (a,), bwd)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    shifted = x - np.max(x, axis=axis, keepdims=True)
    ls = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def bwd(g):
        return ((a, g - np.exp(ls) * g.sum(axis=axis, keepdims=True)),)

    return _make(ls, (a,), bwd)


def normalize(a: Tensor, eps: float = 1e-6) -> Tensor:
    """Zero-mean unit-variance over the last axis (the affine-free half of layer norm)."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + a.data.dtype.type(eps))
    y = xc * inv

    def bwd(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return ((a, inv * (g - gm - y * gym)),)

    return _make(y, (a,), bwd)


def layer_norm(x: Tensor, beta: Tensor, gamma: Tensor, eps: float = 1e-6) -> Tensor:
    """beta * normalize(x) + gamma; beta multiplies, gamma shifts."""
    d = x.data.shape[-1]
    if beta.data.shape != (d,) or gamma.data.shape != (d,):
        raise DimensionError(
            f"layer_norm affine shapes {beta.data.shape}/{gamma.data.shape} do not match feature width {d}"
        )
    return add(mul(beta, normalize(x, eps)), gamma)


def mean(a: Tensor) -> Tensor:
    out = a.data.mean()

    def bwd(g):
        return ((a, np.full(a.data.shape, g / a.data.size, dtype=a.data.dtype)),)

    return _make(np.asarray(out), (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    out = a.data.sum()

    def bwd(g):
        return ((a, np.full(a.data.shape, g, dtype=a.data.dtype)),)

    return _make(np.asarray(out), (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def bwd(g):
        return ((a, g.reshape(a.data.shape)),)

    return _make(out, (a,), bwd)


def swap_axes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    out = a.data.swapaxes(ax1, ax2)

    def bwd(g):
        return ((a, g.swapaxes(ax1, ax2)),)

    return _make(out, (a,), bwd)


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    """View of a[..., start:stop]; gradient scatters back into a zero block."""
    out = a.data[..., start:stop]

    def bwd(g):
        ga = np.zeros(a.data.shape, dtype=a.data.dtype)
        ga[..., start:stop] = g
        return ((a, ga),)

    return _make(out, (a,), bwd)


def shift_one(a: Tensor, axis: int) -> Tensor:
    """Shift content by +1 along `axis`, filling the vacated slot with zeros.

    Along rows this is "shift down", along columns "shift right": position i
    of the output holds position i-1 of the input, position 0 holds zeros.
    """
    if not 0 <= axis < a.data.ndim:
        raise DimensionError(f"shift axis {axis} out of range for rank {a.data.ndim}")
    out = np.zeros_like(a.data)
    src = [slice(None)] * a.data.ndim
    dst = [slice(None)] * a.data.ndim
    src[axis] = slice(0, -1)
    dst[axis] = slice(1, None)
    out[tuple(dst)] = a.data[tuple(src)]

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[tuple(src)] = g[tuple(dst)]
        return ((a, ga),)

    return _make(out, (a,), bwd)


def embedding_lookup(table: Tensor, indices: np.ndarray) -> Tensor:
    """Rows of `table` gathered by an integer array; grad scatters back with +=."""
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise DimensionError(f"embedding indices must be integers, got dtype {idx.dtype}")
    n = table.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        bad = int(idx.min()) if idx.min() < 0 else int(idx.max())
        raise VocabularyError(f"embedding index {bad} outside vocabulary of size {n}")
    out = table.data[idx]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return ((table, gt),)

    return _make(out, (table,), bwd)


def gather_nll(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood (nats) of `targets` under softmax(logits).

    targets must match logits' leading shape; values index the last axis.
    """
    t = np.asarray(targets)
    if t.shape != logits.data.shape[:-1]:
        raise DimensionError(
            f"target shape {t.shape} does not match logits leading shape {logits.data.shape[:-1]}"
        )
    if not np.issubdtype(t.dtype, np.integer):
        raise DimensionError(f"targets must be integers, got dtype {t.dtype}")
    v = logits.data.shape[-1]
    if t.size and (t.min() < 0 or t.max() >= v):
        bad = int(t.min()) if t.min() < 0 else int(t.max())
        raise VocabularyError(f"target {bad} outside vocabulary of size {v}")

    x = logits.data
    shifted = x - np.max(x, axis=-1, keepdims=True)
    ls = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(ls, t[..., None], axis=-1)[..., 0]
    n = max(t.size, 1)
    out = np.asarray(-picked.sum() / n, dtype=x.dtype)

    def bwd(g):
        coeff = float(g) / n
        gl = np.exp(ls) * x.dtype.type(coeff)
        flat = gl.reshape(-1, v)
        flat[np.arange(t.size), t.reshape(-1)] -= x.dtype.type(coeff)
        return ((logits, gl),)

    return _make(out, (logits,), bwd)


# ---------------------------------------------------------------------------
# parameters


@dataclass
class Parameter:
    """A named leaf tensor, as yielded by named_parameters."""

    name: str
    value: Tensor


def named_parameters(obj, prefix: str = "") -> list[Parameter]:
    """Walk a dataclass/list/tuple structure and collect every Tensor leaf.

    Order is deterministic: dataclass field order, then list position. Non-tensor
    leaves (ints, strings, flags) are skipped.
    """
    out: list[Parameter] = []
    if isinstance(obj, Tensor):
        out.append(Parameter(prefix or "param", obj))
    elif is_dataclass(obj) and not isinstance(obj, type):
        for f in fields(obj):
            child = getattr(obj, f.name)
            name = f"{prefix}.{f.name}" if prefix else f.name
            out.extend(named_parameters(child, name))
    elif isinstance(obj, (list, tuple)):
        for i, child in enumerate(obj):
            out.extend(named_parameters(child, f"{prefix}[{i}]" if prefix else f"[{i}]"))
    return out


def parameters(obj) -> list[Tensor]:
    return [p.value for p in named_parameters(obj)]


def zero_grads(obj):
    for t in parameters(obj):
        t.zero_grad()


def randn_param(rng: np.random.Generator, shape, std: float = 0.02, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


def zeros_param(shape, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def ones_param(shape, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def full_param(shape, value: float, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.full(shape, value, dtype=dtype), requires_grad=True)
