"""Minimal reverse-mode autodiff over float64 numpy arrays.

The engine supports exactly the primitives the rest of the package needs:
dense matmul (optionally batched over matching leading axes), elementwise
arithmetic, axis reductions, layer norm, GELU/SiLU, softmax, MSE loss, row
broadcasts and slicing/concat/reshape/transpose for graph plumbing.

Tensors are immutable after construction. Forward evaluation records a tape
(parent links plus a backward closure) unless gradients are globally disabled
via `no_grad()`, which samplers use to keep inference cheap.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

_GRAD_ENABLED = True

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)

LAYER_NORM_EPS = 1e-5


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for a primitive."""

    def __init__(self, primitive: str, *shapes: tuple):
        self.primitive = primitive
        self.shapes = shapes
        pretty = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{primitive}: incompatible shapes {pretty}")


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (forward values only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """Immutable float64 array node in an autodiff graph."""

    __slots__ = ("data", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; all routing goes through the module-level primitives.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _is_scalar_like(t: Tensor) -> bool:
    return t.size == 1


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy-style broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    data = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _node(data, (a, b), backward)


def _binary_shapes_ok(a: Tensor, b: Tensor) -> bool:
    if a.shape == b.shape or _is_scalar_like(a) or _is_scalar_like(b):
        return True
    # trailing-vector broadcast: (..., D) op (D,)
    return b.data.ndim == 1 and a.data.ndim >= 1 and a.shape[-1] == b.shape[0]


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if not _binary_shapes_ok(a, b):
        raise ShapeError("add", a.shape, b.shape)
    data = a.data + b.data

    def backward(g):
        ga = _reduce_to(g, a.shape) if a.requires_grad else None
        gb = _reduce_to(g, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if not _binary_shapes_ok(a, b):
        raise ShapeError("sub", a.shape, b.shape)
    data = a.data - b.data

    def backward(g):
        ga = _reduce_to(g, a.shape) if a.requires_grad else None
        gb = _reduce_to(-g, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if not _binary_shapes_ok(a, b):
        raise ShapeError("mul", a.shape, b.shape)
    data = a.data * b.data

    def backward(g):
        ga = _reduce_to(g * b.data, a.shape) if a.requires_grad else None
        gb = _reduce_to(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(data, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def mean_pool_axis(a, axis: int) -> Tensor:
    a = _as_tensor(a)
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError("mean_pool_axis", a.shape, (axis,))
    axis = axis % a.data.ndim
    n = a.shape[axis]
    data = a.data.mean(axis=axis)

    def backward(g):
        return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

    return _node(data, (a,), backward)


def layer_norm(a, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    a = _as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (a.data - mu) * inv

    def backward(g):
        d = a.shape[-1]
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),) if d > 0 else (g,)

    return _node(y, (a,), backward)


def gelu(a) -> Tensor:
    """Exact erf-form GELU."""
    a = _as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    data = x * cdf

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _node(data, (a,), backward)


def silu(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    sig = 1.0 / (1.0 + np.exp(-x))
    data = x * sig

    def backward(g):
        return (g * (sig * (1.0 + x * (1.0 - sig))),)

    return _node(data, (a,), backward)


def softmax_axis(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _node(y, (a,), backward)


def mse_loss(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("mse_loss", a.shape, b.shape)
    diff = a.data - b.data
    data = np.asarray((diff * diff).mean())
    n = diff.size

    def backward(g):
        scale = 2.0 * float(g) / n
        ga = scale * diff if a.requires_grad else None
        gb = -scale * diff if b.requires_grad else None
        return ga, gb

    return _node(data, (a, b), backward)


def broadcast_add(m, v) -> Tensor:
    """Add a vector (D,) to every row of (..., D)."""
    m, v = _as_tensor(m), _as_tensor(v)
    if v.data.ndim != 1 or m.data.ndim < 1 or m.shape[-1] != v.shape[0]:
        raise ShapeError("broadcast_add", m.shape, v.shape)
    data = m.data + v.data

    def backward(g):
        gm = g if m.requires_grad else None
        gv = _reduce_to(g, v.shape) if v.requires_grad else None
        return gm, gv

    return _node(data, (m, v), backward)


def clip_values(a, low: float, high: float) -> Tensor:
    """Clamp to [low, high]; gradient passes through strictly inside the band."""
    a = _as_tensor(a)
    data = np.clip(a.data, low, high)
    inside = (a.data > low) & (a.data < high)

    def backward(g):
        return (g * inside,)

    return _node(data, (a,), backward)


def slice_chunk(a, axis: int, start: int, length: int) -> Tensor:
    a = _as_tensor(a)
    axis = axis % a.data.ndim
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeError("slice_chunk", a.shape, (axis, start, length))
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _node(data, (a,), backward)


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]

    def backward(g):
        grads = []
        offset = 0
        for p, s in zip(parts, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + s)
            grads.append(g[tuple(idx)] if p.requires_grad else None)
            offset += s
        return grads

    return _node(data, tuple(parts), backward)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.shape),)

    return _node(data, (a,), backward)


def transpose(a, perm: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    data = a.data.transpose(perm)
    inv = tuple(np.argsort(perm))

    def backward(g):
        return (g.transpose(inv),)

    return _node(data, (a,), backward)


_PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "mean_pool_axis": mean_pool_axis,
    "layer_norm": layer_norm,
    "gelu": gelu,
    "silu": silu,
    "softmax_axis": softmax_axis,
    "mse_loss": mse_loss,
    "broadcast_add": broadcast_add,
    "slice_chunk": slice_chunk,
}


def apply_primitive(op: str, *inputs, **kwargs) -> Tensor:
    """Dispatch one of the named core primitives."""
    try:
        fn = _PRIMITIVES[op]
    except KeyError:
        raise ValueError(f"unknown primitive {op!r}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad_of(loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar loss w.r.t. given leaf tensors (zeros if unreachable)."""
    if loss.data.ndim != 0 and loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        if node._backward is None:
            continue  # leaf or constant: keep any accumulated gradient
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    out = []
    for t in wrt:
        out.append(grads.get(id(t), np.zeros_like(t.data)))
    return out


def backward(loss: Tensor, registry: "ParamRegistry",
             names: Sequence[str] | None = None) -> dict[str, Tensor]:
    """Gradient of a scalar loss for registered parameters.

    Unreachable parameters get zero gradients. Passing `names` restricts the
    result (the trainer asks only for currently trainable parameters).
    """
    if names is None:
        names = [name for name, _, _ in registry.entries()]
    tensors = [registry.get(n) for n in names]
    grads = grad_of(loss, tensors)
    return {n: Tensor(g) for n, g in zip(names, grads)}


def finite_diff_check(fn: Callable[[Tensor], Tensor], point: Tensor, h: float) -> float:
    """Max relative error between autodiff and central differences at `point`."""
    if h <= 0:
        raise ValueError("h must be positive")
    leaf = Tensor(point.data.copy(), requires_grad=True)
    auto = grad_of(fn(leaf), [leaf])[0]
    flat = point.data.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] += h
        hi = fn(Tensor(bumped.reshape(point.shape))).item()
        bumped[i] = flat[i] - h
        lo = fn(Tensor(bumped.reshape(point.shape))).item()
        fd = (hi - lo) / (2.0 * h)
        err = abs(auto.reshape(-1)[i] - fd) / (abs(fd) + 1e-12)
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# parameter registry
# ---------------------------------------------------------------------------

PARAM_TAGS = ("identity", "motion", "controller", "backbone")


class ParamRegistry:
    """Named trainable tensors, each carrying a dimension tag.

    Gradient masks for the alternating trainer are derived purely from tags,
    so the tag partition must stay total; registration enforces it.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._tags: dict[str, str] = {}

    def register(self, name: str, tensor: Tensor, tag: str) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        if tag not in PARAM_TAGS:
            raise ValueError(f"parameter {name!r} has unknown tag {tag!r}")
        tensor.requires_grad = True
        self._params[name] = tensor
        self._tags[name] = tag
        return tensor

    def get(self, name: str) -> Tensor:
        return self._params[name]

    def tag(self, name: str) -> str:
        return self._tags[name]

    def replace(self, name: str, tensor: Tensor) -> None:
        old = self._params[name]
        if old.shape != tensor.shape:
            raise ShapeError("replace", old.shape, tensor.shape)
        tensor.requires_grad = old.requires_grad
        self._params[name] = tensor

    def set_trainable(self, tags: set[str]) -> None:
        """Mark only the given tag groups as requiring gradients.

        Frozen parameters still participate in forward evaluation; skipping
        their gradient accumulation just trims the reverse pass.
        """
        for name, tensor, tag in self.entries():
            tensor.requires_grad = tag in tags

    def entries(self) -> list[tuple[str, Tensor, str]]:
        return [(n, self._params[n], self._tags[n]) for n in self._params]

    def names(self, tag: str | None = None) -> list[str]:
        if tag is None:
            return list(self._params)
        return [n for n, t in self._tags.items() if t == tag]

    def state_arrays(self, tag: str | None = None) -> dict[str, np.ndarray]:
        """Snapshot copies of parameter values (for bit-identity checks and IO)."""
        return {n: self._params[n].data.copy() for n in self.names(tag)}

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)
