"""Minimal reverse-mode differentiation over dense float64 arrays.

Define-by-run: every primitive application creates a node holding its value,
its parents, and the vector-Jacobian rules for the parents that need
gradients. The recorded graph is the tape; it is rebuilt on every forward
pass and discarded afterwards. :func:`grad` replays the tape once in reverse
topological order, so every node is visited exactly once and two backward
passes over the same tape produce bit-identical gradients.

All values are 64-bit, row-major. Any primitive producing a NaN or Inf
raises :class:`NonFiniteError` immediately; downstream code can therefore
assume finite tensors.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform to the primitive's rule."""


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf."""


class Tensor:
    """A dense float64 array plus its position in the current tape.

    ``requires_grad=True`` marks a trainable leaf. Interior nodes are created
    by the primitives below and carry closures that push adjoints to their
    parents.
    """

    __slots__ = ("data", "requires_grad", "_parents", "_vjps")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64, order="C")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor initialized with non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjps: tuple[Callable[[np.ndarray], np.ndarray] | None, ...] = ()

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def square(self):
        return square(self)

    def abs(self):
        return absolute(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data: np.ndarray, parents: Sequence[Tensor], vjps: Sequence) -> Tensor:
    """Record one primitive application on the tape."""
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("primitive produced non-finite output")
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64, order="C")
    tracked = tuple(p.requires_grad for p in parents)
    out.requires_grad = any(tracked)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._vjps = tuple(v if t else None for v, t in zip(vjps, tracked))
    else:
        out._parents = ()
        out._vjps = ()
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum an adjoint back down to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise primitives --------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return _node(out, (a, b), (lambda g: _unbroadcast(g, a.shape),
                               lambda g: _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return _node(out, (a, b), (lambda g: _unbroadcast(g, a.shape),
                               lambda g: _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return _node(out, (a, b), (lambda g: _unbroadcast(g * b.data, a.shape),
                               lambda g: _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = a.data / b.data
    return _node(out, (a, b),
                 (lambda g: _unbroadcast(g / b.data, a.shape),
                  lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), (lambda g: -g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _node(out, (a,), (lambda g: g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _node(out, (a,), (lambda g: g / a.data,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), (lambda g: g * (1.0 - out * out),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * a.data, (a,), (lambda g: g * (2.0 * a.data),))


def absolute(a) -> Tensor:
    # Subgradient at 0 is defined as 0 (np.sign(0) == 0).
    a = as_tensor(a)
    return _node(np.abs(a.data), (a,), (lambda g: g * np.sign(a.data),))


# -- contractions and reductions ---------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0 or a.ndim > 2 or b.ndim > 2:
        raise ShapeError(f"matmul supports 1-D/2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def grad_a(g):
        if a.ndim == 1 and b.ndim == 1:
            return g * b.data
        if a.ndim == 1:  # (k,) @ (k,m) -> (m,)
            return g @ b.data.T
        if b.ndim == 1:  # (n,k) @ (k,) -> (n,)
            return np.outer(g, b.data)
        return g @ b.data.T

    def grad_b(g):
        if a.ndim == 1 and b.ndim == 1:
            return g * a.data
        if a.ndim == 1:
            return np.outer(a.data, g)
        if b.ndim == 1:
            return a.data.T @ g
        return a.data.T @ g

    return _node(out, (a, b), (grad_a, grad_b))


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _axis_tuple(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return np.broadcast_to(g, a.shape)

    return _node(out, (a,), (backward,))


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _axis_tuple(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return np.broadcast_to(g / count, a.shape)

    return _node(out, (a,), (backward,))


def logsumexp(a, axis=None, keepdims: bool = False) -> Tensor:
    """Shift-stable log-sum-exp; gradient is the softmax of the input."""
    a = as_tensor(a)
    axes = _axis_tuple(axis, a.ndim)
    m = a.data.max(axis=axes, keepdims=True)
    shifted = np.exp(a.data - m)
    total = shifted.sum(axis=axes, keepdims=True)
    out = m + np.log(total)
    if not keepdims:
        out = out.reshape(tuple(n for i, n in enumerate(a.shape) if i not in axes))

    soft = shifted / total

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return g * soft

    return _node(out, (a,), (backward,))


def l2_norm(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _axis_tuple(axis, a.ndim)
    out = np.sqrt((a.data * a.data).sum(axis=axes, keepdims=True))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return g * a.data / out

    result = out if keepdims else out.reshape(
        tuple(n for i, n in enumerate(a.shape) if i not in axes))
    return _node(result, (a,), (backward,))


def l2_normalize(a, axis=-1) -> Tensor:
    """Scale along ``axis`` to unit L2 norm. Zero vectors are an error."""
    a = as_tensor(a)
    axes = _axis_tuple(axis, a.ndim)
    r = np.sqrt((a.data * a.data).sum(axis=axes, keepdims=True))
    if np.any(r == 0.0):
        raise NonFiniteError("cannot normalize a zero vector")
    u = a.data / r

    def backward(g):
        inner = (g * u).sum(axis=axes, keepdims=True)
        return (g - u * inner) / r

    return _node(u, (a,), (backward,))


# -- structural primitives ----------------------------------------------------


def concatenate(tensors: Iterable, axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concatenate requires at least one tensor")
    out = np.concatenate([p.data for p in parts], axis=axis)
    ax = axis % out.ndim
    sizes = [p.shape[ax] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        def backward(g):
            index = [slice(None)] * g.ndim
            index[ax] = slice(offsets[i], offsets[i + 1])
            return g[tuple(index)]
        return backward

    return _node(out, parts, tuple(make_vjp(i) for i in range(len(parts))))


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    expanded = [reshape(p, p.shape[:axis] + (1,) + p.shape[axis:]) for p in parts]
    return concatenate(expanded, axis=axis)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return _node(out, (a,), (lambda g: g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    perm = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(perm))
    out = a.data.transpose(perm)
    return _node(out, (a,), (lambda g: g.transpose(inverse),))


def _is_basic_key(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None
               for p in parts)


def getitem(a, key) -> Tensor:
    """Basic (slice/int) indexing; use :func:`take` for index arrays."""
    a = as_tensor(a)
    if not _is_basic_key(key):
        raise ShapeError("getitem supports basic indexing only; use take/gather_rows")
    out = a.data[key]

    def backward(g):
        # Basic keys never repeat an element, so += accumulates correctly.
        full = np.zeros_like(a.data)
        full[key] += g
        return full

    return _node(out, (a,), (backward,))


def take(a, indices, axis: int = 0) -> Tensor:
    """Select along ``axis`` with an integer index array (repeats allowed)."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    out = np.take(a.data, idx, axis=axis)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(np.moveaxis(full, axis, 0), idx, np.moveaxis(g, axis, 0))
        return full

    return _node(out, (a,), (backward,))


def gather_rows(a, indices) -> Tensor:
    """``out[i] = a[i, indices[i]]`` for a 2-D tensor."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("gather_rows expects a 2-D tensor")
    idx = np.asarray(indices, dtype=np.intp)
    rows = np.arange(a.shape[0])
    out = a.data[rows, idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (rows, idx), g)
        return full

    return _node(out, (a,), (backward,))


def dot(a, b) -> Tensor:
    return matmul(a, b)


# -- backward pass -------------------------------------------------------------


def _topological_order(root: Tensor) -> list[Tensor]:
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


def grad(loss: Tensor, params: Sequence[Tensor], strict: bool = False) -> list[np.ndarray]:
    """Gradients of a scalar loss for each parameter, aligned with ``params``.

    Parameters absent from the tape get zero gradients unless ``strict``.
    """
    if loss.shape != ():
        raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
    param_ids = {id(p) for p in params}
    adjoints: dict[int, np.ndarray] = {id(loss): np.ones(())}
    if loss.requires_grad:
        for node in reversed(_topological_order(loss)):
            g = adjoints.pop(id(node))
            if id(node) in param_ids:
                adjoints[id(node)] = g  # keep leaf adjoints readable below
            for parent, vjp in zip(node._parents, node._vjps):
                if vjp is None:
                    continue
                contribution = vjp(g)
                key = id(parent)
                if key in adjoints:
                    adjoints[key] = adjoints[key] + contribution
                else:
                    adjoints[key] = contribution

    results = []
    for param in params:
        g = adjoints.get(id(param))
        if g is None:
            if strict:
                raise ValueError("parameter is not reachable from the loss")
            g = np.zeros_like(param.data)
        results.append(np.asarray(g, dtype=np.float64).reshape(param.shape))
    return results


def finite_diff_check(loss_fn: Callable[[Sequence[Tensor]], Tensor],
                      params: Sequence[Tensor],
                      step: float = 1e-5,
                      sample_count: int = 100,
                      seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Samples ``sample_count`` coordinates uniformly across all parameters,
    perturbs each by ``+-step``, and compares against the analytic gradient of
    ``loss_fn(params)``. Relative error uses ``max(|numeric|, 1e-8)`` in the
    denominator.
    """
    if step <= 0:
        raise ValueError("finite difference step must be positive")
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    analytic = grad(loss_fn(params), params)
    sizes = [p.data.size for p in params]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(sample_count):
        flat = int(rng.integers(total))
        pi = 0
        while flat >= sizes[pi]:
            flat -= sizes[pi]
            pi += 1
        view = params[pi].data.reshape(-1)
        original = view[flat]
        view[flat] = original + step
        up = loss_fn(params).item()
        view[flat] = original - step
        down = loss_fn(params).item()
        view[flat] = original
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NonFiniteError("loss is non-finite at a perturbed point")
        numeric = (up - down) / (2.0 * step)
        err = abs(analytic[pi].reshape(-1)[flat] - numeric) / max(abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
