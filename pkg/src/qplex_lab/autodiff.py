"""Minimal reverse-mode automatic differentiation over numpy float64 arrays.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients.  Broadcasting is
deliberately restricted: operands must have equal shapes or one of them must be
a scalar.  Anything else goes through :func:`broadcast_to` explicitly.
"""
from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError, NumericalFailure

_ids = itertools.count()
_grad_enabled = True

GradFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """Dense float64 array that participates in a differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: GradFn | None = None
        self._id = next(_ids)
        self.name = name

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
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce("sum", self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce("max", self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce("mean", self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn: GradFn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._grad_fn = grad_fn
    return out


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a graph (acting, targets, evaluation)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


# ---------------------------------------------------------------------------
# elementwise


def _is_scalar(t: Tensor) -> bool:
    return t.data.ndim == 0 or t.data.size == 1 and t.data.ndim <= 1


def _check_pair(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not compatible")


def _fit(grad: np.ndarray, target: Tensor) -> np.ndarray:
    # scalar operands absorb the sum of the broadcast gradient
    if grad.shape == target.shape:
        return grad
    return np.asarray(grad.sum()).reshape(target.shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (_fit(g, a), _fit(g, b)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (_fit(g, a), _fit(-g, b)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (_fit(g * bd, a), _fit(g * ad, b)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "div")
    ad, bd = a.data, b.data
    return _make(ad / bd, (a, b), lambda g: (_fit(g / bd, a), _fit(-g * ad / (bd * bd), b)))


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _make(-x.data, (x,), lambda g: (-g,))


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    return _make(out, (x,), lambda g: (g * (out > 0),))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def absolute(x: Tensor) -> Tensor:
    # np.sign(0) == 0 gives the zero subgradient at the kink
    sign = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * sign,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    d = x.data
    neg_part = alpha * np.expm1(np.minimum(d, 0.0))
    out = np.where(d > 0, d, neg_part)
    slope = np.where(d > 0, 1.0, neg_part + alpha)
    return _make(out, (x,), lambda g: (g * slope,))


def square(x: Tensor) -> Tensor:
    d = x.data
    return _make(d * d, (x,), lambda g: (2.0 * g * d,))


_UNARY = {
    "neg": neg,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "abs": absolute,
    "exp": exp,
    "elu": elu,
    "square": square,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch an elementwise operation by tag (``"add"``, ``"relu"``, ...)."""
    if op in _BINARY:
        if len(args) != 2:
            raise ContractError(f"{op} takes two operands, got {len(args)}")
        return _BINARY[op](*args)
    if op in _UNARY:
        if len(args) != 1:
            raise ContractError(f"{op} takes one operand, got {len(args)}")
        return _UNARY[op](as_tensor(args[0]))
    raise ContractError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation


def matmul(a, b) -> Tensor:
    """Matrix product of 2-D operands, or batched product of equal-batch 3-D operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
        raise DimensionError(f"matmul: need matching 2-D or 3-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    ad, bd = a.data, b.data

    def grad_fn(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _make(ad @ bd, (a, b), grad_fn)


def affine(x, w, b) -> Tensor:
    """``x @ w + b`` with ``b`` (shape ``[..., 1, out]`` or ``[out]``) repeated over rows.

    A fused form of matmul followed by an explicit row broadcast of the bias.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != w.ndim or x.shape[-1] != w.shape[-2] or x.shape[:-2] != w.shape[:-2]:
        raise DimensionError(f"affine: shapes {x.shape} and {w.shape} do not align")
    bias_shape = w.shape[:-2] + (1, w.shape[-1])
    if b.size != int(np.prod(bias_shape)):
        raise DimensionError(f"affine: bias {b.shape} does not match output width {w.shape[-1]}")
    xd, wd = x.data, w.data
    out = xd @ wd + b.data.reshape(bias_shape)

    def grad_fn(g):
        gx = g @ np.swapaxes(wd, -1, -2) if x.requires_grad else None
        gw = np.swapaxes(xd, -1, -2) @ g if w.requires_grad else None
        gb = g.sum(axis=-2).reshape(b.shape) if b.requires_grad else None
        return gx, gw, gb

    return _make(out, (x, w, b), grad_fn)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {src} as {tuple(shape)}") from exc
    return _make(out, (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    # contiguous copies keep later matmuls on the BLAS path
    return _make(np.ascontiguousarray(np.transpose(x.data, axes)), (x,),
                 lambda g: (np.ascontiguousarray(np.transpose(g, inverse)),))


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit numpy-style broadcast; the gradient sums over the expanded axes."""
    shape = tuple(shape)
    src = x.shape
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError as exc:
        raise DimensionError(f"broadcast_to: cannot expand {src} to {shape}") from exc

    lead = len(shape) - len(src)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(src) if n == 1 and shape[lead + i] != 1
    )

    def grad_fn(g):
        return (g.sum(axis=axes, keepdims=True).reshape(src) if axes else g,)

    return _make(out, (x,), grad_fn)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[x.shape for x in xs]} along axis {axis}") from exc
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _make(out, tuple(xs), lambda g: tuple(np.split(g, bounds, axis=axis)))


def getitem(x: Tensor, index) -> Tensor:
    src = x.shape

    def grad_fn(g):
        full = np.zeros(src)
        np.add.at(full, index, g)
        return (full,)

    return _make(x.data[index], (x,), grad_fn)


_sg_tape: dict | None = None


def stop_gradient(x: Tensor) -> Tensor:
    """Identity in value; the backward pass sends zero through this node."""
    x = as_tensor(x)
    value = x.data.copy()
    if _sg_tape is not None:
        # finite-difference oracles hold detached values fixed at the base point
        tape = _sg_tape
        if tape["mode"] == "record":
            tape["values"].append(value.copy())
        else:
            value = tape["values"][tape["cursor"]].copy()
            tape["cursor"] += 1
    return _make(value, (x,), lambda g: (np.zeros_like(x.data),))


@contextlib.contextmanager
def stop_gradient_tape(values: list | None = None):
    """Record stop-gradient outputs (``values=None``) or replay previously recorded ones.

    Replaying turns a stop-gradient expression into a plain function of its
    inputs, which is what central differences must probe to check the gradient.
    """
    global _sg_tape
    prev = _sg_tape
    tape = {"mode": "record", "values": []} if values is None else {"mode": "replay", "values": values, "cursor": 0}
    _sg_tape = tape
    try:
        yield tape["values"]
    finally:
        _sg_tape = prev


# ---------------------------------------------------------------------------
# reductions


def _norm_axis(axis, ndim: int):
    if axis is None:
        return None
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


def reduce(op: str, x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Sum, max or mean over one axis (or everything when ``axis`` is None).

    ``max`` routes the whole gradient to the first maximal element.
    """
    x = as_tensor(x)
    axis = _norm_axis(axis, x.ndim)
    count = x.size if axis is None else x.shape[axis]
    if count == 0:
        raise DomainError(f"{op} over an empty axis")
    src = x.shape
    d = x.data

    if op == "sum" or op == "mean":
        scale = 1.0 if op == "sum" else 1.0 / count
        out = d.sum(axis=axis, keepdims=keepdims) * scale

        def grad_fn(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g * scale, src).copy(),)

        return _make(np.asarray(out), (x,), grad_fn)

    if op == "max":
        if axis is None:
            flat = int(np.argmax(d))
            out = np.asarray(d.flat[flat])
            if keepdims:
                out = out.reshape((1,) * x.ndim)

            def grad_fn(g):
                full = np.zeros(d.size)
                full[flat] = np.asarray(g).sum()
                return (full.reshape(src),)

            return _make(out, (x,), grad_fn)

        idx = np.expand_dims(np.argmax(d, axis=axis), axis)
        out = np.take_along_axis(d, idx, axis=axis)
        if not keepdims:
            out = np.squeeze(out, axis=axis)

        def grad_fn(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            full = np.zeros(src)
            np.put_along_axis(full, idx, g, axis=axis)
            return (full,)

        return _make(out, (x,), grad_fn)

    raise ContractError(f"unknown reduction {op!r}")


def one_hot(indices, depth: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    return np.eye(depth)[indices]


# ---------------------------------------------------------------------------
# backward pass


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node._id in seen:
            continue
        seen.add(node._id)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and p._id not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad.

    Returns a map from leaf tensor to its accumulated gradient.  Repeated calls
    without :func:`zero_grad` add up, as in the usual frameworks.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    grads: dict[int, np.ndarray] = {loss._id: np.ones(loss.shape)}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(node._id, None)
        if g is None:
            g = np.zeros(node.shape)
        if node._grad_fn is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            leaves[node] = node.grad
            continue
        for parent, pg in zip(node._parents, node._grad_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent._id)
            grads[parent._id] = pg if prev is None else prev + pg
    return leaves


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their joint L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None)))
    if not np.isfinite(total):
        raise NumericalFailure(f"gradient norm is {total}")
    if total > max_norm:
        scale = max_norm / (total + 1e-6)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


class RMSProp:
    """RMSProp in the PyTorch formulation: ``p -= lr * g / (sqrt(v) + eps)``.

    On construction every parameter's storage is moved into one flat buffer
    (``p.data`` becomes a view), so an update is a handful of vectorised ops.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 5e-4, alpha: float = 0.99, eps: float = 1e-5):
        self.params = list(params)
        self.lr = lr
        self.alpha = alpha
        self.eps = eps
        sizes = [p.size for p in self.params]
        self._offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        total = int(self._offsets[-1])
        self.flat = np.empty(total)
        for p, lo, hi in zip(self.params, self._offsets[:-1], self._offsets[1:]):
            self.flat[lo:hi] = p.data.ravel()
            p.data = self.flat[lo:hi].reshape(p.shape)
        self.square_avg = np.zeros(total)
        self._g = np.empty(total)
        self._tmp = np.empty(total)
        self.steps = 0

    def step(self) -> None:
        g = self._g
        for p, lo, hi in zip(self.params, self._offsets[:-1], self._offsets[1:]):
            if p.grad is None:
                g[lo:hi] = 0.0
            else:
                g[lo:hi] = p.grad.ravel()
        if not np.isfinite(g.sum()):
            bad = next(p for p in self.params if p.grad is not None and not np.all(np.isfinite(p.grad)))
            raise NumericalFailure(f"non-finite gradient for parameter {bad.name or bad._id}")
        v, tmp = self.square_avg, self._tmp
        v *= self.alpha
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - self.alpha
        v += tmp
        np.sqrt(v, out=tmp)
        tmp += self.eps
        np.divide(g, tmp, out=tmp)
        tmp *= self.lr
        self.flat -= tmp
        self.steps += 1

    def zero_grad(self) -> None:
        zero_grad(self.params)


def sgd_like_step(params: Sequence[Tensor], optimizer: RMSProp) -> None:
    """Apply one optimizer update using the gradients stored on ``params``."""
    if [id(p) for p in params] != [id(p) for p in optimizer.params]:
        raise ContractError("optimizer was built for a different parameter list")
    optimizer.step()
