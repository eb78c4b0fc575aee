"""Reverse-mode automatic differentiation on numpy arrays.

Everything runs in float64. A Tensor wraps a value array plus the closure
that routes its output gradient to its parents; calling backward() on a
scalar walks the graph once in reverse topological order, so gradients of
shared subexpressions accumulate correctly. Reductions use numpy's fixed
left-to-right summation, which keeps repeated runs bitwise identical.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

LAYER_NORM_EPS = 1e-5


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class NumericsError(ArithmeticError):
    """Raised when a non-finite value is detected where one is forbidden."""


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False,
                 parents: tuple = (), backward: Callable | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def item(self) -> float:
        return float(self.value)

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate gradients of this (scalar) tensor into the graph."""
        if seed is None:
            if self.value.size != 1:
                raise ShapeError(
                    f"backward() needs a scalar output or explicit seed, got shape {self.shape}")
            seed = np.ones_like(self.value)
        order = _toposort(self)
        self.grad = np.asarray(seed, dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # operator sugar; constants are wrapped on the fly
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, key): return take(self, key)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _toposort(root: Tensor) -> list[Tensor]:
    """Iterative post-order over the subgraph that requires gradients."""
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value, rng: np.random.Generator | None = None) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if g.shape != t.value.shape:
        g = _unbroadcast(g, t.value.shape)
        if g.shape != t.value.shape:
            g = g.reshape(t.value.shape)
    # closures never mutate gradient buffers in place, so aliasing is safe
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over axes that were broadcast in the forward pass."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape))
                 if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _make(value: np.ndarray, parents: Sequence[Tensor],
          backward: Callable[[np.ndarray], None]) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(value, requires_grad=True, parents=tuple(parents), backward=backward)
    return Tensor(value)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    if a.value.shape == b.value.shape:
        return
    try:
        np.broadcast_shapes(a.value.shape, b.value.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.value.shape} and {b.value.shape} do not broadcast")


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)
    return _make(a.value + b.value, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        _accumulate(a, g)
        if b.requires_grad:
            _accumulate(b, -g)
    return _make(a.value - b.value, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * b.value)
        if b.requires_grad:
            _accumulate(b, g * a.value)
    return _make(a.value * b.value, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.value / b.value

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g / b.value)
        if b.requires_grad:
            _accumulate(b, -g * out / b.value)
    return _make(out, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")

    def backward(g):
        if a.requires_grad:
            _accumulate(a, np.matmul(g, np.swapaxes(b.value, -1, -2)))
        if b.requires_grad:
            if b.ndim == 2 and g.ndim > 2:
                # one flat GEMM instead of a batched product plus reduction
                n_in, n_out = b.value.shape
                _accumulate(b, a.value.reshape(-1, n_in).T @ g.reshape(-1, n_out))
            else:
                _accumulate(b, np.matmul(np.swapaxes(a.value, -1, -2), g))
    return _make(np.matmul(a.value, b.value), (a, b), backward)


# ---------------------------------------------------------------------------
# elementwise nonlinearities

def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)

    def backward(g):
        _accumulate(a, g * out)
    return _make(out, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accumulate(a, g / a.value)
    return _make(np.log(a.value), (a,), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)

    def backward(g):
        _accumulate(a, g * (1.0 - out * out))
    return _make(out, (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    v = a.value
    out = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                   np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))

    def backward(g):
        _accumulate(a, g * out * (1.0 - out))
    return _make(out, (a,), backward)


def max_with_zero(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0

    def backward(g):
        _accumulate(a, g * mask)
    return _make(np.where(mask, a.value, 0.0), (a,), backward)


relu = max_with_zero


def gelu(a) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    a = as_tensor(a)
    c = math.sqrt(2.0 / math.pi)
    v = a.value
    t = np.tanh(c * (v + 0.044715 * v * v * v))
    out = 0.5 * v * (1.0 + t)

    def backward(g):
        du = c * (1.0 + 3.0 * 0.044715 * v * v)
        _accumulate(a, g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du))
    return _make(out, (a,), backward)


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.value)

    def backward(g):
        _accumulate(a, g * _sigmoid_np(a.value))
    return _make(out, (a,), backward)


def _sigmoid_np(v: np.ndarray) -> np.ndarray:
    return np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                    np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))


def absolute(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accumulate(a, g * np.sign(a.value))
    return _make(np.abs(a.value), (a,), backward)


def clamp_min(a, floor: float) -> Tensor:
    """Elementwise max(a, floor) against a constant; gradient passes where a > floor."""
    a = as_tensor(a)
    mask = a.value > floor

    def backward(g):
        _accumulate(a, g * mask)
    return _make(np.where(mask, a.value, floor), (a,), backward)


# ---------------------------------------------------------------------------
# reductions and normalizers

def tensor_sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.value.shape))
    return _make(out, (a,), backward)


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.value.mean(axis=axis, keepdims=keepdims)
    n = a.value.size if axis is None else a.value.shape[axis]

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g / n, a.value.shape))
    return _make(out, (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(a, out * (g - dot))
    return _make(out, (a,), backward)


def layer_norm(a, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis to zero mean and unit variance (no affine)."""
    a = as_tensor(a)
    mu = a.value.mean(axis=-1, keepdims=True)
    centered = a.value - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = centered * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * out).mean(axis=-1, keepdims=True)
        _accumulate(a, inv * (g - gm - out * gy))
    return _make(out, (a,), backward)


# ---------------------------------------------------------------------------
# shape plumbing

def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    orig = a.value.shape

    def backward(g):
        _accumulate(a, g.reshape(orig))
    return _make(a.value.reshape(shape), (a,), backward)


def transpose(a, axes: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _accumulate(a, g.transpose(inverse))
    return _make(a.value.transpose(axes), (a,), backward)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat: needs at least one tensor")
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            _accumulate(p, piece)
    return _make(np.concatenate([p.value for p in parts], axis=axis), parts, backward)


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    expanded = [reshape(p, p.value.shape[:axis] + (1,) + p.value.shape[axis:]) for p in parts]
    return concat(expanded, axis=axis)


def take(a, key) -> Tensor:
    """Basic slicing / integer indexing with scatter-add backward."""
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.value)
            np.add.at(full, key, g)
            _accumulate(a, full)
    return _make(a.value[key], (a,), backward)


def diagonal(a) -> Tensor:
    """Main diagonal of the last two axes."""
    a = as_tensor(a)
    n = a.value.shape[-1]
    if a.value.shape[-2] != n:
        raise ShapeError(f"diagonal: last two axes must match, got {a.shape}")
    idx = np.arange(n)

    def backward(g):
        full = np.zeros_like(a.value)
        full[..., idx, idx] = g
        _accumulate(a, full)
    return _make(a.value[..., idx, idx], (a,), backward)


def interp_columns(values: np.ndarray, n_out: int) -> np.ndarray:
    """Linear interpolation of the last axis onto n_out uniform positions.

    Endpoints map to endpoints; a single input or output column degenerates
    to a gather. Pure-numpy core shared with the differentiable op below.
    """
    n_in = values.shape[-1]
    lo, hi, frac = _interp_weights(n_in, n_out)
    return values[..., lo] * (1.0 - frac) + values[..., hi] * frac


def _interp_weights(n_in: int, n_out: int):
    if n_out == 1:
        pos = np.zeros(1)
    elif n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.floor(pos).astype(np.intp)
    lo = np.minimum(lo, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def linear_interp_1d(a, n_out: int) -> Tensor:
    """Differentiable linear interpolation along the last axis."""
    a = as_tensor(a)
    n_in = a.value.shape[-1]
    lo, hi, frac = _interp_weights(n_in, n_out)

    def backward(g):
        full = np.zeros_like(a.value)
        np.add.at(full, (..., lo), g * (1.0 - frac))
        np.add.at(full, (..., hi), g * frac)
        _accumulate(a, full)
    return _make(a.value[..., lo] * (1.0 - frac) + a.value[..., hi] * frac, (a,), backward)


# ---------------------------------------------------------------------------
# gradient verification

class GradCheckResult:
    """Worst-case relative error between reverse-mode and finite differences."""

    def __init__(self, max_rel_err: float, param: str, coord: tuple[int, ...]):
        self.max_rel_err = max_rel_err
        self.param = param
        self.coord = coord

    def __repr__(self):
        return (f"GradCheckResult(max_rel_err={self.max_rel_err:.3e}, "
                f"param={self.param!r}, coord={self.coord})")


def grad_check(f: Callable[[], Tensor], params, eps: float = 1e-5,
               max_coords_per_param: int | None = None, seed: int = 0) -> GradCheckResult:
    """Compare reverse-mode gradients of a deterministic scalar f against
    central finite differences.

    params is a dict name -> Tensor (or an iterable of (name, Tensor)); f must
    read those same Tensor objects. With max_coords_per_param set, a seeded
    subsample of coordinates is probed per parameter.
    """
    if isinstance(params, dict):
        named = list(params.items())
    else:
        named = list(params)
    for _, p in named:
        p.zero_grad()
    out = f()
    if out.value.size != 1:
        raise ShapeError(f"grad_check: f must return a scalar, got shape {out.shape}")
    if not np.isfinite(out.value):
        raise NumericsError("grad_check: non-finite value in forward pass")
    out.backward()
    analytic = {name: (np.zeros_like(p.value) if p.grad is None else p.grad.copy())
                for name, p in named}

    rng = np.random.default_rng(seed)
    worst = GradCheckResult(0.0, "", ())
    for name, p in named:
        flat = p.value.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            coords = np.sort(rng.choice(n, size=max_coords_per_param, replace=False))
        else:
            coords = np.arange(n)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            hi = f().item()
            flat[c] = orig - eps
            lo = f().item()
            flat[c] = orig
            if not (math.isfinite(hi) and math.isfinite(lo)):
                raise NumericsError(
                    f"grad_check: non-finite value while perturbing {name}[{c}]")
            numeric = (hi - lo) / (2.0 * eps)
            a = float(analytic[name].reshape(-1)[c])
            # the floor absorbs central-difference rounding noise on
            # coordinates whose true gradient is (near) zero
            denom = max(abs(a), abs(numeric), 1e-6)
            rel = abs(a - numeric) / denom
            if rel > worst.max_rel_err:
                idx = np.unravel_index(c, p.value.shape)
                worst = GradCheckResult(rel, name, tuple(int(i) for i in idx))
    return worst


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
