"""Dense f64 tensors with define-by-run reverse-mode autodiff.

A Tensor wraps a C-contiguous float64 numpy array. Operations record their
inputs and a gradient closure on the output; ``backward`` on a scalar walks
the recorded graph once in reverse topological order and accumulates
gradients into leaf tensors with ``requires_grad=True``. Each recorded
graph is consumable exactly once; a fresh forward pass rebuilds it.

Matrix multiplication goes through the kernel backend (compiled or numpy
fallback, bit-identical either way) with a fixed left-to-right summation
order over the shared dimension. Other reductions use numpy's built-in
(pairwise) summation, which is deterministic for a fixed shape and build.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf as _erf

from egmf import kernels
from egmf.errors import (
    ConfigError,
    ContractError,
    FiniteValueError,
    GraphConsumedError,
    ShapeError,
)

__all__ = [
    "Tensor",
    "Parameter",
    "tensor",
    "constant",
    "matmul",
    "transpose",
    "reshape",
    "add",
    "sub",
    "mul",
    "scale",
    "shift",
    "neg",
    "power",
    "exp",
    "log",
    "tanh",
    "sigmoid",
    "erf",
    "softplus",
    "relu",
    "tsum",
    "tmean",
    "softmax",
    "log_softmax",
    "concat",
    "slice_axis",
    "gather_rows",
    "stack_rows",
    "activation",
    "mish",
    "gelu",
    "swish",
    "init_parameter",
    "ACTIVATIONS",
]


class Tensor:
    __slots__ = ("values", "requires_grad", "grad", "_parents", "_grad_fn", "_spent")

    def __init__(self, values, requires_grad=False, _parents=(), _grad_fn=None):
        arr = np.asarray(values, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.values = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._grad_fn = _grad_fn
        self._spent = False

    # -- structural accessors ------------------------------------------------

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    @property
    def data(self):
        """Flat row-major view of the underlying f64 buffer."""
        return self.values.reshape(-1)

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Copy of the values, detached from the graph."""
        return self.values.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def check_finite(self, context: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.values)):
            raise FiniteValueError(f"{context}: non-finite value encountered")
        return self

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- autodiff --------------------------------------------------------------

    def backward(self):
        """Reverse-mode gradient accumulation from this scalar.

        Raises ContractError for non-scalar outputs and GraphConsumedError if
        any part of the recorded graph was already consumed.
        """
        if self.values.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {self.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            if node._spent:
                raise GraphConsumedError(
                    "graph already consumed by a previous backward; run forward again"
                )
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.values)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if node._grad_fn is None:
                if g is not None and node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            node._spent = True
            if g is None:
                node._grad_fn = None
                node._parents = ()
                continue
            parent_grads = node._grad_fn(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None:
                    continue
                if not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._grad_fn = None
            node._parents = ()

    # -- operator sugar ----------------------------------------------------------

    def __add__(self, other):
        return shift(self, other) if isinstance(other, (int, float)) else add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, -other)
        return sub(self, other)

    def __rsub__(self, other):
        return shift(neg(self), other)

    def __mul__(self, other):
        return scale(self, other) if isinstance(other, (int, float)) else mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return mul(self, power(other, -1.0))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, float(p))


def tensor(values, requires_grad: bool = False) -> Tensor:
    """Public constructor: validates finiteness of user-supplied data."""
    t = Tensor(values, requires_grad=requires_grad)
    t.check_finite("tensor()")
    return t


def constant(values) -> Tensor:
    """Graph constant (no gradient, no validation)."""
    return Tensor(values)


def _wrap(values, parents, grad_fn) -> Tensor:
    if any(p.requires_grad or p._grad_fn is not None for p in parents):
        return Tensor(values, requires_grad=True, _parents=tuple(parents), _grad_fn=grad_fn)
    return Tensor(values)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient g down to the given operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- core ops ---------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = kernels.matmul(a.values, b.values)

    def grad_fn(g):
        ga = kernels.matmul(g, np.ascontiguousarray(b.values.T)) if a.requires_grad or a._grad_fn else None
        gb = kernels.matmul(np.ascontiguousarray(a.values.T), g) if b.requires_grad or b._grad_fn else None
        return ga, gb

    return _wrap(out, (a, b), grad_fn)


def transpose(t: Tensor) -> Tensor:
    if t.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {t.shape}")
    return _wrap(np.ascontiguousarray(t.values.T), (t,), lambda g: (np.ascontiguousarray(g.T),))


def reshape(t: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = t.shape
    return _wrap(t.values.reshape(shape), (t,), lambda g: (g.reshape(old),))


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.values + b.values
    return _wrap(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.values - b.values
    return _wrap(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.values * b.values
    return _wrap(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)),
    )


def scale(t: Tensor, c: float) -> Tensor:
    c = float(c)
    return _wrap(t.values * c, (t,), lambda g: (g * c,))


def shift(t: Tensor, c: float) -> Tensor:
    c = float(c)
    return _wrap(t.values + c, (t,), lambda g: (g,))


def neg(t: Tensor) -> Tensor:
    return _wrap(-t.values, (t,), lambda g: (-g,))


def power(t: Tensor, p: float) -> Tensor:
    p = float(p)
    x = t.values
    return _wrap(x ** p, (t,), lambda g: (g * p * x ** (p - 1.0),))


def exp(t: Tensor) -> Tensor:
    out = np.exp(t.values)
    return _wrap(out, (t,), lambda g: (g * out,))


def log(t: Tensor) -> Tensor:
    x = t.values
    return _wrap(np.log(x), (t,), lambda g: (g / x,))


def tanh(t: Tensor) -> Tensor:
    out = np.tanh(t.values)
    return _wrap(out, (t,), lambda g: (g * (1.0 - out * out),))


def sigmoid(t: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-t.values))
    return _wrap(out, (t,), lambda g: (g * out * (1.0 - out),))


_TWO_OVER_SQRT_PI = 2.0 / np.sqrt(np.pi)


def erf(t: Tensor) -> Tensor:
    x = t.values
    return _wrap(_erf(x), (t,), lambda g: (g * _TWO_OVER_SQRT_PI * np.exp(-x * x),))


def softplus(t: Tensor) -> Tensor:
    x = t.values
    out = np.logaddexp(0.0, x)
    return _wrap(out, (t,), lambda g: (g / (1.0 + np.exp(-x)),))


def relu(t: Tensor) -> Tensor:
    x = t.values
    return _wrap(np.maximum(x, 0.0), (t,), lambda g: (g * (x > 0.0),))


def tsum(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = t.values.sum(axis=axis, keepdims=keepdims)
    shape = t.shape

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _wrap(out, (t,), grad_fn)


def tmean(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = t.size if axis is None else t.shape[axis]
    return scale(tsum(t, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along axis; rows sum to 1 within 1e-12."""
    x = t.values
    if axis >= x.ndim or axis < -x.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {t.shape}")
    if not np.all(np.isfinite(x)):
        raise FiniteValueError("softmax: input contains NaN or Inf")
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _wrap(out, (t,), grad_fn)


def log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    x = t.values
    if not np.all(np.isfinite(x)):
        raise FiniteValueError("log_softmax: input contains NaN or Inf")
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def grad_fn(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _wrap(out, (t,), grad_fn)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return _wrap(out, tuple(tensors), grad_fn)


def slice_axis(t: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * t.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape = t.shape

    def grad_fn(g):
        full = np.zeros(shape, dtype=np.float64)
        full[idx] = g
        return (full,)

    return _wrap(t.values[idx].copy(), (t,), grad_fn)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Row lookup (embedding gather); backward scatter-adds into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    out = table.values[ids].copy()
    shape = table.shape

    def grad_fn(g):
        full = np.zeros(shape, dtype=np.float64)
        np.add.at(full, ids, g)
        return (full,)

    return _wrap(out, (table,), grad_fn)


def stack_rows(vectors) -> Tensor:
    """Stack 1-D tensors of equal length into a matrix (one per row)."""
    rows = [reshape(v, (1, v.size)) for v in vectors]
    return concat(rows, axis=0)


# -- activations -------------------------------------------------------------


def mish(t: Tensor) -> Tensor:
    return mul(t, tanh(softplus(t)))


def gelu(t: Tensor) -> Tensor:
    """Exact Gaussian-CDF form x * Phi(x), not the tanh approximation."""
    phi = scale(shift(erf(scale(t, 1.0 / np.sqrt(2.0))), 1.0), 0.5)
    return mul(t, phi)


def swish(t: Tensor) -> Tensor:
    return mul(t, sigmoid(t))


ACTIVATIONS = {
    "mish": mish,
    "gelu": gelu,
    "swish": swish,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
}


def activation(t: Tensor, kind: str) -> Tensor:
    try:
        fn = ACTIVATIONS[kind.lower()]
    except KeyError:
        raise ConfigError(
            f"unknown activation {kind!r}; expected one of {sorted(ACTIVATIONS)}"
        ) from None
    return fn(t)


# -- parameters ----------------------------------------------------------------


class Parameter:
    """Named, optionally frozen weight. Frozen means no gradient accumulation."""

    __slots__ = ("name", "tensor", "frozen")

    def __init__(self, tensor: Tensor, frozen: bool = False, name: str = ""):
        self.name = name
        self.tensor = tensor
        self.frozen = frozen
        self.tensor.requires_grad = not frozen

    @property
    def values(self) -> np.ndarray:
        return self.tensor.values

    @property
    def grad(self):
        return self.tensor.grad

    def zero_grad(self):
        self.tensor.grad = None

    def freeze(self):
        self.frozen = True
        self.tensor.requires_grad = False
        self.tensor.grad = None

    def unfreeze(self):
        self.frozen = False
        self.tensor.requires_grad = True

    def __repr__(self):
        state = "frozen" if self.frozen else "trainable"
        return f"Parameter({self.name!r}, shape={self.tensor.shape}, {state})"


def init_parameter(shape, scheme: str, rng=None) -> Tensor:
    """Deterministic initializer: xavier_uniform | zeros | ones."""
    shape = tuple(int(s) for s in shape)
    if not shape:
        raise ConfigError("init_parameter: shape must be non-empty")
    if scheme == "zeros":
        return Tensor(np.zeros(shape, dtype=np.float64))
    if scheme == "ones":
        return Tensor(np.ones(shape, dtype=np.float64))
    if scheme == "xavier_uniform":
        if rng is None:
            raise ConfigError("xavier_uniform requires an RngState")
        fan_in = shape[-1]
        fan_out = shape[0] if len(shape) > 1 else shape[-1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return Tensor(rng.uniform(shape) * (2.0 * bound) - bound)
    raise ConfigError(f"unknown init scheme {scheme!r}")
