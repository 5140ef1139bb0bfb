"""Adaptive feature enhancer: three bottleneck experts + hierarchical gating.

The fused vector runs through three parallel bottleneck MLPs at different
compression ratios (1:8 Mish, 1:4 GELU, 1:2 Swish — narrow/deep-compression
experts for coarse structure, wide ones for detail). A two-stage gate picks
the mixture:

  stage 1: sigmoid(Linear(f)) -> per-expert confidences w in (0,1)^3 plus a
           residual coefficient beta in (0,1) (the 4th output)
  stage 2: softmax(MLP(concat(f, w))) -> simplex weights alpha over experts

Output: f_enhanced = sum_k alpha_k * E_k(f) + beta * f.

Note beta is *not* part of the softmax — the residual strength is free to
be anywhere in (0,1) regardless of how the experts split their share.

``enhance`` accepts test-rig overrides for alpha/beta and an optional
dropped expert (softmax renormalizes over the remaining two), which is how
the expert-ablation runs are wired.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from egmf.errors import ConfigError
from egmf.nn import Linear, Module
from egmf.rng import RngState
from egmf.tensor import (
    Tensor,
    activation,
    add,
    concat,
    constant,
    gelu,
    mul,
    sigmoid,
    slice_axis,
    softmax,
)

# (bottleneck ratio, activation) per expert, in fixed order 1..3
EXPERT_SPECS = ((8, "mish"), (4, "gelu"), (2, "swish"))


@dataclass
class GateOutput:
    w: np.ndarray      # stage-1 confidences, shape [3], each in (0,1)
    alpha: np.ndarray  # stage-2 simplex weights, shape [3]
    beta: float        # residual coefficient in (0,1)


@dataclass
class EnhancedRepresentation:
    f_enhanced: Tensor
    gate: GateOutput
    expert_outputs: list  # 3 numpy vectors [d_h], diagnostic copies


class BottleneckExpert(Module):
    """down-project d_h -> d_h/ratio, activate, up-project back; no skip."""

    def __init__(self, d_h: int, ratio: int, act: str, rng: RngState):
        if d_h % ratio != 0:
            raise ConfigError(f"d_h={d_h} not divisible by bottleneck ratio {ratio}")
        self.ratio = ratio
        self.act = act
        self.bottleneck_dim = d_h // ratio
        self.down = Linear(d_h, self.bottleneck_dim, rng)
        self.up = Linear(self.bottleneck_dim, d_h, rng)

    def __call__(self, f: Tensor) -> Tensor:
        return self.up(activation(self.down(f), self.act))


class AdaptiveEnhancer(Module):
    def __init__(self, d_h: int, rng: RngState):
        if d_h % 8 != 0:
            raise ConfigError(f"d_h={d_h} must be divisible by 8 for the 1:8 expert")
        self.d_h = d_h
        self.experts = [BottleneckExpert(d_h, r, a, rng) for r, a in EXPERT_SPECS]
        self.gate1 = Linear(d_h, 4, rng)
        self.gate2_in = Linear(d_h + 3, d_h // 2, rng)
        self.gate2_out = Linear(d_h // 2, 3, rng)

    def expert_forward(self, k: int, f_fusion: Tensor) -> Tensor:
        """Run expert k (1-based, matching the 1:8 / 1:4 / 1:2 ordering)."""
        if k not in (1, 2, 3):
            raise ConfigError(f"expert index must be 1, 2 or 3, got {k}")
        return self.experts[k - 1](f_fusion)

    def gate_stage1(self, f_fusion: Tensor):
        """Affine d_h -> 4, sigmoid; first three are w, fourth is beta."""
        z = sigmoid(self.gate1(f_fusion))
        return slice_axis(z, 0, 0, 3), slice_axis(z, 0, 3, 4)

    def _stage2_logits(self, f_fusion: Tensor, w: Tensor) -> Tensor:
        cat = concat([f_fusion, w], axis=0)
        return self.gate2_out(gelu(self.gate2_in(cat)))

    def gate_stage2(self, f_fusion: Tensor, w: Tensor) -> Tensor:
        return softmax(self._stage2_logits(f_fusion, w), axis=0)

    def enhance(
        self,
        f_fusion: Tensor,
        dropped_expert: int | None = None,
        alpha_override=None,
        beta_override=None,
    ) -> EnhancedRepresentation:
        if dropped_expert is not None and dropped_expert not in (1, 2, 3):
            raise ConfigError(f"dropped expert must be 1, 2 or 3, got {dropped_expert}")

        expert_outs = [self.experts[i](f_fusion) for i in range(3)]

        w, beta = self.gate_stage1(f_fusion)
        if alpha_override is not None:
            alpha = constant(np.asarray(alpha_override, dtype=np.float64))
        elif dropped_expert is None:
            alpha = self.gate_stage2(f_fusion, w)
        else:
            # renormalize the softmax over the two surviving logits; the
            # dropped expert gets an exact zero share
            logits = self._stage2_logits(f_fusion, w)
            drop = dropped_expert - 1
            keep = [i for i in range(3) if i != drop]
            surv = softmax(
                concat([slice_axis(logits, 0, i, i + 1) for i in keep], axis=0), axis=0
            )
            parts, pos = [], 0
            for i in range(3):
                if i == drop:
                    parts.append(constant(np.zeros(1)))
                else:
                    parts.append(slice_axis(surv, 0, pos, pos + 1))
                    pos += 1
            alpha = concat(parts, axis=0)
        if beta_override is not None:
            beta = constant(np.asarray([float(beta_override)]))

        f_enh = mul(slice_axis(alpha, 0, 0, 1), expert_outs[0])
        for k in (1, 2):
            f_enh = add(f_enh, mul(slice_axis(alpha, 0, k, k + 1), expert_outs[k]))
        f_enh = add(f_enh, mul(beta, f_fusion))

        gate = GateOutput(
            w=w.numpy(), alpha=alpha.numpy(), beta=float(beta.values[0])
        )
        return EnhancedRepresentation(
            f_enhanced=f_enh,
            gate=gate,
            expert_outputs=[e.numpy() for e in expert_outs],
        )
