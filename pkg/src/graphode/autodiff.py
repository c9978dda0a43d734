"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its inputs and a vector-Jacobian closure on the
resulting tensor, so a call to :func:`backward` on a scalar loss yields
exact gradients for every reachable parameter.  Everything is float64:
the test suite leans heavily on finite-difference checks, which are not
trustworthy in float32.

Broadcasting is deliberately restricted: two shapes are compatible only
if they are equal or one is a trailing suffix of the other (leading-axis
expansion).  All other shape adaptation must be explicit.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to an operation."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (forward values only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _asarray(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A float64 array plus its position in the recorded computation graph.

    Constants carry no parents; results of differentiable ops carry the
    parent tensors and a vjp closure mapping the output cotangent to the
    parent cotangents.
    """

    __slots__ = ("values", "parents", "vjp", "requires_grad", "grad", "name")

    def __init__(self, values, parents=(), vjp=None, requires_grad=False, name=None):
        if type(values) is not np.ndarray or values.dtype != np.float64:
            values = _asarray(values)
        self.values = values
        self.parents = parents if type(parents) is tuple else tuple(parents)
        self.vjp = vjp
        if not requires_grad:
            for p in self.parents:
                if p.requires_grad:
                    requires_grad = True
                    break
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    def item(self) -> float:
        return float(self.values)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # arithmetic sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __getitem__(self, key):
        return tslice(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """A leaf tensor that accumulates gradients."""

    def __init__(self, values, name=None):
        super().__init__(values, requires_grad=True, name=name)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(values, parents, vjp) -> Tensor:
    if _grad_enabled:
        for p in parents:
            if p.requires_grad:
                return Tensor(values, parents=parents, vjp=vjp, requires_grad=True)
    return Tensor(values)


def _check_suffix(op: str, sa: tuple, sb: tuple):
    if sa == sb:
        return
    small, big = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    if len(small) == len(big) or big[len(big) - len(small):] != small:
        raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    return g


# primitives ----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_suffix("add", a.shape, b.shape)
    out = a.values + b.values

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_suffix("sub", a.shape, b.shape)
    out = a.values - b.values

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_suffix("mul", a.shape, b.shape)
    out = a.values * b.values

    def vjp(g):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)

    return _make(out, (a, b), vjp)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_suffix("div", a.shape, b.shape)
    out = a.values / b.values

    def vjp(g):
        ga = _unbroadcast(g / b.values, a.shape)
        gb = _unbroadcast(-g * a.values / (b.values * b.values), b.shape)
        return ga, gb

    return _make(out, (a, b), vjp)


def scale(a: Tensor, c: float) -> Tensor:
    a = _lift(a)
    c = float(c)
    out = a.values * c

    def vjp(g):
        return (g * c,)

    return _make(out, (a,), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim == 0 or b.ndim == 0 or a.ndim > 2 or b.ndim > 2:
        raise ShapeError(f"matmul: expects 1D/2D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.values, b.values
    out = av @ bv

    def vjp(g):
        A2 = av if av.ndim > 1 else av[None, :]
        B2 = bv if bv.ndim > 1 else bv[:, None]
        g2 = g.reshape(A2.shape[0], B2.shape[1])
        return (g2 @ B2.T).reshape(av.shape), (A2.T @ g2).reshape(bv.shape)

    return _make(out, (a, b), vjp)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    try:
        out = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes}") from exc
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(out, tuple(tensors), vjp)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    count = a.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def exp(a: Tensor) -> Tensor:
    a = _lift(a)
    out = np.exp(a.values)

    def vjp(g):
        return (g * out,)

    return _make(out, (a,), vjp)


def log(a: Tensor) -> Tensor:
    a = _lift(a)
    out = np.log(a.values)

    def vjp(g):
        return (g / a.values,)

    return _make(out, (a,), vjp)


def tanh(a: Tensor) -> Tensor:
    a = _lift(a)
    out = np.tanh(a.values)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), vjp)


def relu(a: Tensor) -> Tensor:
    a = _lift(a)
    mask = a.values > 0
    out = np.where(mask, a.values, 0.0)

    def vjp(g):
        return (g * mask,)

    return _make(out, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    a = _lift(a)
    out = 1.0 / (1.0 + np.exp(-np.clip(a.values, -500, 500)))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), vjp)


def softplus(a: Tensor) -> Tensor:
    a = _lift(a)
    out = np.logaddexp(0.0, a.values)
    sig = 1.0 / (1.0 + np.exp(-np.clip(a.values, -500, 500)))

    def vjp(g):
        return (g * sig,)

    return _make(out, (a,), vjp)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _lift(a)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return ((g - (g * out).sum(axis=axis, keepdims=True)) * out,)

    return _make(out, (a,), vjp)


def tslice(a: Tensor, key) -> Tensor:
    a = _lift(a)
    out = a.values[key]

    def vjp(g):
        full = np.zeros(a.shape)
        np.add.at(full, key, g)
        return (full,)

    return _make(out, (a,), vjp)


def broadcast_to(a: Tensor, shape) -> Tensor:
    a = _lift(a)
    shape = tuple(shape)
    _check_suffix("broadcast", a.shape, shape)
    if len(a.shape) > len(shape):
        raise ShapeError(f"broadcast: cannot shrink {a.shape} to {shape}")
    out = np.broadcast_to(a.values, shape).copy()

    def vjp(g):
        return (_unbroadcast(g, a.shape),)

    return _make(out, (a,), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    a = _lift(a)
    out = a.values.reshape(shape)

    def vjp(g):
        return (g.reshape(a.shape),)

    return _make(out, (a,), vjp)


def _scatter_add(out: np.ndarray, idx: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """out[idx] += vals with duplicate indices, in one of two regimes.

    np.add.at is correct but slow on large inputs; sorting plus reduceat
    is much faster there, so switch on size.
    """
    if vals.size < 32768 or len(idx) == 0:
        np.add.at(out, idx, vals)
        return out
    order = np.argsort(idx, kind="stable")
    sidx = idx[order]
    starts = np.concatenate(([0], np.flatnonzero(np.diff(sidx)) + 1))
    out[sidx[starts]] += np.add.reduceat(vals[order], starts, axis=0)
    return out


def gather(a: Tensor, indices) -> Tensor:
    """Select rows along axis 0 by an integer index array."""
    a = _lift(a)
    idx = np.asarray(indices, dtype=np.intp)
    out = a.values[idx]

    def vjp(g):
        return (_scatter_add(np.zeros(a.shape), idx, g),)

    return _make(out, (a,), vjp)


def segment_sum(a: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of `a` into `num_segments` buckets along axis 0."""
    a = _lift(a)
    seg = np.asarray(segment_ids, dtype=np.intp)
    if seg.shape != a.shape[:1]:
        raise ShapeError(f"segment_sum: ids {seg.shape} vs rows {a.shape}")
    out = _scatter_add(np.zeros((num_segments,) + a.shape[1:]), seg, a.values)

    def vjp(g):
        return (g[seg],)

    return _make(out, (a,), vjp)


_PRIMITIVES = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "matmul": matmul,
    "concat": concat,
    "sum": tsum,
    "mean": tmean,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "relu": relu,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "softmax": softmax,
    "scale": scale,
    "slice": tslice,
    "broadcast": broadcast_to,
    "reshape": reshape,
    "gather": gather,
    "segment_sum": segment_sum,
}


def primitive_forward(op_kind: str, inputs, **kwargs) -> Tensor:
    """Dispatch a primitive by name. `inputs` is a list of tensors."""
    if op_kind not in _PRIMITIVES:
        raise ValueError(f"unknown primitive {op_kind!r}")
    fn = _PRIMITIVES[op_kind]
    if op_kind == "concat":
        return fn(inputs, **kwargs)
    return fn(*inputs, **kwargs)


def checkpoint(f, z: Tensor) -> Tensor:
    """Memory-saving wrapper: run `f` without recording, recompute on demand.

    `f` must map one tensor to one tensor and be a pure function of its
    input and of leaf parameters.  The forward pass stores only the output
    values; the backward pass re-runs `f` with recording enabled and
    backpropagates the cotangent through the recomputed graph, so leaf
    parameters inside `f` still accumulate exact gradients.
    """
    z = _lift(z)
    with no_grad():
        out_vals = f(Tensor(z.values)).values

    def vjp(g):
        global _grad_enabled
        prev = _grad_enabled
        _grad_enabled = True
        try:
            probe = Tensor(z.values, requires_grad=True)
            inner = tsum(mul(f(probe), Tensor(g)))
            grads = backward(inner)
        finally:
            _grad_enabled = prev
        return (grads.get(probe, np.zeros(z.shape)),)

    # Always recorded while grads are enabled: parameters hidden inside f
    # need the recomputation pass even when z itself is a constant.
    if _grad_enabled:
        return Tensor(out_vals, parents=(z,), vjp=vjp, requires_grad=True)
    return Tensor(out_vals)


# reverse pass --------------------------------------------------------


def backward(loss: Tensor) -> dict:
    """Run reverse accumulation from a scalar loss.

    Returns a map from tensor to its gradient array; leaf tensors with
    requires_grad additionally accumulate into their `.grad` buffer.
    """
    if loss.values.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    cotangents: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    result: dict[Tensor, np.ndarray] = {}
    for node in reversed(topo):
        g = cotangents.pop(id(node), None)
        if g is None:
            continue
        result[node] = g
        if node.requires_grad and not node.parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not parent.requires_grad or pg is None:
                continue
            pid = id(parent)
            prev = cotangents.get(pid)
            # Out-of-place accumulation: vjp outputs may alias g or each
            # other, so in-place += could corrupt sibling cotangents.
            cotangents[pid] = pg if prev is None else prev + pg
    return result


def grad_check(f, x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` maps a tensor to a scalar tensor and must be evaluable at x +/- eps
    per coordinate.  A non-finite function value is reported as failure
    (inf) rather than raised.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = x.values.copy()
    probe = Parameter(base.copy())
    out = f(probe)
    if out.values.size != 1 or not np.isfinite(out.values).all():
        return math.inf
    backward(out)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    work = base.copy()
    flat = work.reshape(-1)
    nflat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(Tensor(work)).values)
            flat[i] = orig - eps
            fm = float(f(Tensor(work)).values)
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                return math.inf
            nflat[i] = (fp - fm) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def zero_grads(params):
    for p in params:
        p.grad = None
