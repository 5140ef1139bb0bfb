"""Small neural-net layer toolkit on top of the tensor core.

Module gives parameter discovery and name stamping; Linear, LayerNorm,
FeedForward and MultiHeadAttention are the shared blocks used by the
fusion stage and the toy language model.
"""

from __future__ import annotations

import numpy as np

from egmf.errors import ConfigError, ShapeError
from egmf.rng import RngState
from egmf.tensor import (
    Parameter,
    Tensor,
    activation,
    add,
    concat,
    constant,
    init_parameter,
    matmul,
    mul,
    power,
    reshape,
    slice_axis,
    softmax,
    sub,
    tmean,
    transpose,
)


class Module:
    """Container with recursive parameter discovery over instance attributes."""

    def named_parameters(self, prefix: str = ""):
        for attr, val in vars(self).items():
            path = f"{prefix}{attr}"
            if isinstance(val, Parameter):
                yield path, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{path}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Parameter):
                        yield f"{path}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def finalize_names(self, root: str = ""):
        """Stamp dotted-path names onto parameters; names must be unique."""
        seen = set()
        prefix = f"{root}." if root else ""
        for name, p in self.named_parameters(prefix):
            if name in seen:
                raise ConfigError(f"duplicate parameter name {name!r}")
            seen.add(name)
            p.name = name

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def freeze(self):
        for p in self.parameters():
            p.freeze()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.values.copy() for name, p in self.named_parameters()}

    def load_state_arrays(self, state: dict[str, np.ndarray], prefix: str = ""):
        for name, p in self.named_parameters(prefix):
            if name not in state:
                raise ConfigError(f"missing parameter {name!r} in state")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.tensor.shape:
                raise ShapeError(
                    f"parameter {name!r}: stored shape {arr.shape} != model shape {p.tensor.shape}"
                )
            p.tensor.values[...] = arr


class Linear(Module):
    """Affine map y = x W^T + b with weight stored as [d_out, d_in]."""

    def __init__(self, d_in: int, d_out: int, rng: RngState, bias: bool = True):
        self.d_in = d_in
        self.d_out = d_out
        self.weight = Parameter(init_parameter((d_out, d_in), "xavier_uniform", rng))
        self.bias = Parameter(init_parameter((d_out,), "zeros")) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        squeeze = x.ndim == 1
        if squeeze:
            x = reshape(x, (1, x.size))
        if x.shape[1] != self.d_in:
            raise ShapeError(
                f"linear: input shape {x.shape} incompatible with weight "
                f"{self.weight.tensor.shape}"
            )
        y = matmul(x, transpose(self.weight.tensor))
        if self.bias is not None:
            y = add(y, self.bias.tensor)
        if squeeze:
            y = reshape(y, (self.d_out,))
        return y


class LayerNorm(Module):
    """Normalizes the last axis to zero mean / unit variance, then scales."""

    def __init__(self, dim: int, eps: float = 1e-5):
        self.dim = dim
        self.eps = eps
        self.gain = Parameter(init_parameter((dim,), "ones"))
        self.shift_param = Parameter(init_parameter((dim,), "zeros"))

    def __call__(self, x: Tensor) -> Tensor:
        mu = tmean(x, axis=-1, keepdims=True)
        centered = sub(x, mu)
        var = tmean(mul(centered, centered), axis=-1, keepdims=True)
        inv = power(var + self.eps, -0.5)
        normed = mul(centered, inv)
        return add(mul(normed, self.gain.tensor), self.shift_param.tensor)


class FeedForward(Module):
    """Position-wise MLP d -> hidden -> d with a configurable activation."""

    def __init__(self, dim: int, hidden: int, rng: RngState, act: str = "gelu"):
        self.act = act
        self.w_in = Linear(dim, hidden, rng)
        self.w_out = Linear(hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.w_out(activation(self.w_in(x), self.act))


class MultiHeadAttention(Module):
    """Scaled dot-product attention with n_heads heads over 2-D inputs.

    Queries come from q_in [Lq, d], keys/values from kv_in [Lk, d]. Scores
    are scaled by 1/sqrt(d/n_heads). An additive mask (constant [Lq, Lk])
    is applied before the softmax. Optional low-rank adapters add their
    delta to the query / value projections.
    """

    def __init__(self, dim: int, n_heads: int, rng: RngState):
        if dim % n_heads != 0:
            raise ConfigError(f"attention dim {dim} not divisible by n_heads {n_heads}")
        self.dim = dim
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)

    def __call__(
        self,
        q_in: Tensor,
        kv_in: Tensor,
        mask: np.ndarray | None = None,
        q_adapter=None,
        v_adapter=None,
    ):
        """Returns (output [Lq, d], per-head attention weights as numpy arrays)."""
        q = self.wq(q_in)
        if q_adapter is not None:
            q = add(q, q_adapter.delta(q_in))
        k = self.wk(kv_in)
        v = self.wv(kv_in)
        if v_adapter is not None:
            v = add(v, v_adapter.delta(kv_in))

        inv_scale = 1.0 / np.sqrt(self.head_dim)
        mask_t = constant(mask) if mask is not None else None
        head_outs = []
        head_weights = []
        for hidx in range(self.n_heads):
            lo, hi = hidx * self.head_dim, (hidx + 1) * self.head_dim
            qh = slice_axis(q, 1, lo, hi)
            kh = slice_axis(k, 1, lo, hi)
            vh = slice_axis(v, 1, lo, hi)
            scores = matmul(qh, transpose(kh)) * inv_scale
            if mask_t is not None:
                scores = add(scores, mask_t)
            weights = softmax(scores, axis=1)
            head_weights.append(weights.numpy())
            head_outs.append(matmul(weights, vh))
        merged = concat(head_outs, axis=1)
        return self.wo(merged), head_weights


def causal_mask(length: int) -> np.ndarray:
    """Additive mask: large negative above the diagonal, zero elsewhere."""
    mask = np.zeros((length, length), dtype=np.float64)
    mask[np.triu_indices(length, k=1)] = -1e30
    return mask
