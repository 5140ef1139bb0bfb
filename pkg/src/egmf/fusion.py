"""Cross-modal fusion: text attends to the audio-visual pair.

Pipeline per utterance: project every modality to a shared width d_h, stack
the audio and visual vectors into a 2-row memory, run text-query cross
attention over that memory, then self attention over the text positions,
then a position-wise FFN; each sublayer is residual + post-LayerNorm. The
final sequence is mean-pooled into a single fused vector.

Attention maps for both stages are kept as numpy diagnostics so ablation
runs can export where the text looked.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from egmf.encoders import ModalityEmbeddings
from egmf.nn import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention
from egmf.rng import RngState
from egmf.tensor import Tensor, add, stack_rows, tmean


@dataclass
class ProjectedStreams:
    H_t: Tensor   # [L_t, d_h]
    H_a: Tensor   # [d_h]
    H_v: Tensor   # [d_h]
    H_av: Tensor  # [2, d_h], row 0 audio, row 1 visual


@dataclass
class FusedRepresentation:
    f_fusion: Tensor
    attn_weights_cross: list = field(default_factory=list)  # per head, [L_t, 2]
    attn_weights_self: list = field(default_factory=list)   # per head, [L_t, L_t]


class CrossModalFusion(Module):
    def __init__(self, d_text_in: int, d_av: int, d_h: int, n_heads: int, rng: RngState):
        self.d_h = d_h
        self.proj_text = Linear(d_text_in, d_h, rng)
        self.proj_audio = Linear(d_av, d_h, rng)
        self.proj_visual = Linear(d_av, d_h, rng)
        self.cross_attn = MultiHeadAttention(d_h, n_heads, rng)
        self.ln_cross = LayerNorm(d_h)
        self.self_attn = MultiHeadAttention(d_h, n_heads, rng)
        self.ln_self = LayerNorm(d_h)
        self.ffn = FeedForward(d_h, 4 * d_h, rng, act="gelu")
        self.ln_ffn = LayerNorm(d_h)

    def project_streams(self, emb: ModalityEmbeddings) -> ProjectedStreams:
        H_t = self.proj_text(emb.f_t)
        H_a = self.proj_audio(emb.f_a)
        H_v = self.proj_visual(emb.f_v)
        return ProjectedStreams(H_t=H_t, H_a=H_a, H_v=H_v, H_av=stack_rows([H_a, H_v]))

    def cross_attention_block(self, H_t: Tensor, H_av: Tensor):
        """Text queries, audio-visual keys/values; returns (Z_cross, head maps)."""
        attn, weights = self.cross_attn(H_t, H_av)
        return self.ln_cross(add(attn, H_t)), weights

    def self_attention_block(self, Z_cross: Tensor):
        """Bidirectional self attention over text positions (no mask)."""
        attn, weights = self.self_attn(Z_cross, Z_cross)
        return self.ln_self(add(attn, Z_cross)), weights

    def ffn_pool(self, Z_self: Tensor) -> Tensor:
        h = self.ln_ffn(add(self.ffn(Z_self), Z_self))
        return tmean(h, axis=0)

    def fuse(self, emb: ModalityEmbeddings) -> FusedRepresentation:
        streams = self.project_streams(emb)
        z_cross, w_cross = self.cross_attention_block(streams.H_t, streams.H_av)
        z_self, w_self = self.self_attention_block(z_cross)
        f_fusion = self.ffn_pool(z_self)
        return FusedRepresentation(
            f_fusion=f_fusion, attn_weights_cross=w_cross, attn_weights_self=w_self
        )
