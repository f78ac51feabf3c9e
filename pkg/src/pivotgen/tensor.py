"""Dense float32 tensors with reverse-mode differentiation.

The recorded graph doubles as the tape: every op that touches a tensor
with `requires_grad` attaches its parents and a backward closure, and
`backward()` replays the tape in reverse topological order. Gradients
accumulate additively into `.grad` until `zero_grad()`.

Hot inner loops (softmax, layer norm, GELU, cross-entropy) are routed
through `pivotgen.kernels`, which picks the compiled or NumPy lane at
import time. Everything else is plain NumPy.

Scope is exactly what a small transformer stack needs: no views with
shared mutation, no in-place math on tensors that are part of a graph.

A graph and its tensors belong to one thread; independent graphs may run
concurrently, and read-only forwards over frozen parameters are safe to
share.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible; names both shapes."""


Array = np.ndarray

# Backward closures receive the output gradient and return one gradient
# (or None) per parent, in parent order.
_BackwardFn = Callable[[Array], tuple]


def _as_f32(data) -> Array:
    arr = np.ascontiguousarray(data, dtype=np.float32)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data: Array = _as_f32(data)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: _BackwardFn | None = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- gradient bookkeeping ------------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every requires_grad node.

        `self` must be a scalar (size 1). Repeated calls without
        `zero_grad` add up, so multi-term losses may be driven either as
        one summed tensor or as separate backward passes.
        """
        if self.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        flowing: dict[int, Array] = {id(self): np.ones_like(self.data)}
        for node in order:
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad += g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not _needs_grad(parent):
                    continue
                acc = flowing.get(id(parent))
                if acc is None:
                    flowing[id(parent)] = pg
                else:
                    acc += pg

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return mean(self, axis, keepdims)


def _wrap(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float32))


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _make(data: Array, parents: tuple[Tensor, ...], backward: _BackwardFn) -> Tensor:
    out = Tensor(data)
    if any(_needs_grad(p) for p in parents):
        out._parents = parents
        out._backward = backward
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    """Reverse topological order (children before their parents)."""
    post: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            post.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    post.reverse()
    return post


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a broadcast gradient back to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return np.ascontiguousarray(g, dtype=np.float32)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable") from None


# -- elementwise arithmetic ----------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    data = a.data + b.data

    def bw(g: Array):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return _make(data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    data = a.data - b.data

    def bw(g: Array):
        return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

    return _make(data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    data = a.data * b.data

    def bw(g: Array):
        ga = _unbroadcast(g * b.data, a.shape)
        gb = _unbroadcast(g * a.data, b.shape)
        return (ga, gb)

    return _make(data, (a, b), bw)


def scale(a: Tensor, s: float) -> Tensor:
    s32 = np.float32(s)
    data = a.data * s32

    def bw(g: Array):
        return (g * s32,)

    return _make(data, (a,), bw)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def bw(g: Array):
        return (g * data,)

    return _make(data, (a,), bw)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def bw(g: Array):
        return (g / a.data,)

    return _make(data, (a,), bw)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, np.float32(0.0))

    def bw(g: Array):
        return (g * (a.data > 0),)

    return _make(data, (a,), bw)


def gelu(a: Tensor) -> Tensor:
    flat = a.data.reshape(-1)
    data = kernels.gelu_fwd(flat).reshape(a.shape)

    def bw(g: Array):
        gx = kernels.gelu_bwd(flat, np.ascontiguousarray(g.reshape(-1)))
        return (gx.reshape(a.shape),)

    return _make(data, (a,), bw)


# -- linear algebra --------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ for shapes {a.shape} and {b.shape}")
    data = np.matmul(a.data, b.data)

    def bw(g: Array):
        ga = gb = None
        if _needs_grad(a):
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if _needs_grad(b):
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return (ga, gb)

    return _make(data, (a, b), bw)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    perm = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    data = np.ascontiguousarray(np.transpose(a.data, perm))
    inv = np.argsort(perm)

    def bw(g: Array):
        return (np.ascontiguousarray(np.transpose(g, inv)),)

    return _make(data, (a,), bw)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = np.ascontiguousarray(a.data.reshape(shape))

    def bw(g: Array):
        return (np.ascontiguousarray(g.reshape(a.shape)),)

    return _make(data, (a,), bw)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat: need at least one tensor")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g: Array):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return _make(data, tuple(parts), bw)


def slice_(a: Tensor, key) -> Tensor:
    data = np.ascontiguousarray(a.data[key])

    def bw(g: Array):
        ga = np.zeros_like(a.data)
        ga[key] = g
        return (ga,)

    return _make(data, (a,), bw)


def embedding(weight: Tensor, ids: Array) -> Tensor:
    """Gather rows of `weight` by integer index array `ids`."""
    idx = np.asarray(ids)
    if idx.min(initial=0) < 0 or (idx.size and idx.max() >= weight.shape[0]):
        raise ShapeError(f"embedding: ids out of range for table of {weight.shape[0]} rows")
    data = np.ascontiguousarray(weight.data[idx])

    def bw(g: Array):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, idx.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (gw,)

    return _make(data, (weight,), bw)


def take_positions(a: Tensor, pos: Array) -> Tensor:
    """Select one time step per batch row: (B, T, D) x (B,) -> (B, D)."""
    if a.ndim != 3:
        raise ShapeError(f"take_positions: expected (B, T, D), got {a.shape}")
    rows = np.arange(a.shape[0])
    data = np.ascontiguousarray(a.data[rows, pos])

    def bw(g: Array):
        ga = np.zeros_like(a.data)
        ga[rows, pos] = g
        return (ga,)

    return _make(data, (a,), bw)


# -- reductions -------------------------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float32)

    def bw(g: Array):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(np.float32),)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.ascontiguousarray(np.broadcast_to(gk, a.shape)),)

    return _make(np.asarray(data, dtype=np.float32), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis, keepdims), 1.0 / count)


def l2_norm(a: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Euclidean norm along `axis` (kept), floored by eps for stability."""
    sq = (a.data * a.data).sum(axis=axis, keepdims=True)
    norms = np.sqrt(sq + np.float32(eps))

    def bw(g: Array):
        return (g * a.data / norms,)

    return _make(norms, (a,), bw)


def l2_normalize(a: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Rows scaled to unit Euclidean norm along `axis`."""
    sq = (a.data * a.data).sum(axis=axis, keepdims=True)
    inv = (1.0 / np.sqrt(sq + np.float32(eps))).astype(np.float32)
    data = a.data * inv

    def bw(g: Array):
        inner = (g * data).sum(axis=axis, keepdims=True)
        return ((g - data * inner) * inv,)

    return _make(data, (a,), bw)


# -- fused / kernel-backed ops ------------------------------------------------------


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, max-shifted."""
    d = a.shape[-1]
    y2 = kernels.softmax_fwd(np.ascontiguousarray(a.data.reshape(-1, d)))
    data = y2.reshape(a.shape)

    def bw(g: Array):
        gx = kernels.softmax_bwd(y2, np.ascontiguousarray(g.reshape(-1, d)))
        return (gx.reshape(a.shape),)

    return _make(data, (a,), bw)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis with learned gain/bias."""
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} do not match feature dim ({d},)")
    x2 = np.ascontiguousarray(a.data.reshape(-1, d))
    y2, xhat, inv_std = kernels.layernorm_fwd(x2, gain.data, bias.data, eps)

    def bw(g: Array):
        g2 = np.ascontiguousarray(g.reshape(-1, d))
        gx, ggain, gbias = kernels.layernorm_bwd(xhat, inv_std, gain.data, g2)
        return (gx.reshape(a.shape), ggain, gbias)

    return _make(y2.reshape(a.shape), (a, gain, bias), bw)


def cross_entropy_rows(logits: Tensor, targets: Array) -> Tensor:
    """Per-row -log softmax(logits)[target]; shape (N, V) x (N,) -> (N,)."""
    tgt = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or tgt.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy_rows: logits {logits.shape} vs targets {tgt.shape}")
    if tgt.size and (tgt.min() < 0 or tgt.max() >= logits.shape[1]):
        raise ShapeError(f"cross_entropy_rows: target ids outside [0, {logits.shape[1]})")
    losses, probs = kernels.cross_entropy_fwd(np.ascontiguousarray(logits.data), tgt)

    def bw(g: Array):
        return (kernels.cross_entropy_bwd(probs, tgt, np.ascontiguousarray(g)),)

    return _make(losses, (logits,), bw)


def cosine_matrix(a: Tensor, b: Tensor) -> Tensor:
    """All-pairs cosine similarity: (N, D) x (M, D) -> (N, M)."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"cosine_matrix: incompatible shapes {a.shape} and {b.shape}")
    return matmul(l2_normalize(a), transpose(l2_normalize(b)))


# -- gradient verification ------------------------------------------------------


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference grads.

    Error per coordinate is |analytic - numeric| / max(1, |numeric|); `f`
    must be deterministic and return a scalar Tensor.
    """
    if step <= 0:
        raise ValueError(f"grad_check: step must be positive, got {step}")
    probe = Tensor(x.data.copy(), requires_grad=True)
    loss = f(probe)
    if loss.size != 1:
        raise ShapeError(f"grad_check: f must return a scalar, got shape {loss.shape}")
    loss.backward()
    analytic = np.zeros_like(probe.data) if probe.grad is None else probe.grad.copy()

    flat = probe.data.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(Tensor(probe.data.copy())).item()
        flat[i] = orig - step
        lo = f(Tensor(probe.data.copy())).item()
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError(f"grad_check: non-finite value at coordinate {i}")
        numeric = (hi - lo) / (2.0 * step)
        err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
