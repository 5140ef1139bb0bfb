"""End-to-end model: encoders -> fusion -> enhancer -> pseudo tokens -> LM.

Construction draws all parameters from one RngState in a fixed order, so a
seed fully determines the initial weights. The language model inside is
expected to be loaded from a pretraining checkpoint and frozen before
training; everything else (encoders, fusion, enhancer, pseudo projector,
LoRA adapters) stays trainable.

Ablation arms rewire the same forward pass instead of changing shapes:
dropping a modality replaces that encoder output with a constant zero
tensor before projection, dropping an expert renormalizes the gate softmax
over the surviving two, and no_lora pins the adapters to a frozen zero
delta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from egmf.config import EgmfConfig
from egmf.encoders import AudioVisualEncoder, ModalityEmbeddings, TextEmbedder, UtteranceFeatures
from egmf.enhancer import AdaptiveEnhancer, EnhancedRepresentation
from egmf.errors import ConfigError
from egmf.fusion import CrossModalFusion, FusedRepresentation
from egmf.nn import Module
from egmf.prompts import TaskPrompt
from egmf.rng import RngState
from egmf.tensor import Tensor, constant
from egmf.toy_lm import AdapterSet, PseudoProjector, ToyLM, WrappedInput, wrap_input


@dataclass(frozen=True)
class AblationFlags:
    drop_audio: bool = False
    drop_visual: bool = False
    drop_text: bool = False
    dropped_expert: int | None = None
    no_lora: bool = False

    @classmethod
    def from_names(cls, names) -> "AblationFlags":
        names = list(names)
        kw = {}
        experts = []
        for name in names:
            if name in ("drop_audio", "drop_visual", "drop_text", "no_lora"):
                kw[name] = True
            elif name in ("drop_expert_1", "drop_expert_2", "drop_expert_3"):
                experts.append(int(name[-1]))
            else:
                raise ConfigError(f"unknown ablation flag {name!r}")
        if len(experts) > 1:
            raise ConfigError(f"cannot drop more than one expert at once: {experts}")
        if experts:
            kw["dropped_expert"] = experts[0]
        flags = cls(**kw)
        if flags.drop_audio and flags.drop_visual and flags.drop_text:
            raise ConfigError("cannot drop all three modalities — nothing remains to fuse")
        return flags


NO_ABLATION = AblationFlags()


@dataclass
class ModelOutput:
    wrapped: WrappedInput
    fusion_rep: FusedRepresentation
    enhanced_rep: EnhancedRepresentation


class EgmfModel(Module):
    def __init__(self, config: EgmfConfig, rng: RngState):
        self.config = config
        m = config.model
        self.lm = ToyLM(config.lm, rng)
        self.audio_enc = AudioVisualEncoder(m.d_a, m.d_av, rng)
        self.visual_enc = AudioVisualEncoder(m.d_v, m.d_av, rng)
        self.fusion = CrossModalFusion(
            config.lm.d_emb, m.d_av, m.d_h, m.n_fusion_heads, rng
        )
        self.enhancer = AdaptiveEnhancer(m.d_h, rng)
        self.pseudo = PseudoProjector(m.d_h, config.lm.d_emb, config.lm.n_tokens, rng)
        self.adapters = AdapterSet(config.lm, rng, r=m.lora_r, alpha=m.lora_alpha)
        self.finalize_names()

    def text_embedder(self) -> TextEmbedder:
        return TextEmbedder(self.lm.embedding)

    def apply_ablation(self, flags: AblationFlags):
        """Irreversible arm setup (currently only no_lora needs state)."""
        if flags.no_lora:
            self.adapters.freeze_at_zero()

    def encode(self, sample: UtteranceFeatures, flags: AblationFlags = NO_ABLATION) -> ModalityEmbeddings:
        embedder = self.text_embedder()
        if flags.drop_text:
            f_t = constant(np.zeros((len(sample.text_tokens), self.config.lm.d_emb)))
        else:
            f_t = embedder(sample.text_tokens)
        d_av = self.config.model.d_av
        if flags.drop_audio:
            f_a = constant(np.zeros(d_av))
        else:
            f_a = self.audio_enc(sample.audio_seq)
        if flags.drop_visual:
            f_v = constant(np.zeros(d_av))
        else:
            f_v = self.visual_enc(sample.visual_seq)
        return ModalityEmbeddings(f_t=f_t, f_a=f_a, f_v=f_v)

    def forward(
        self,
        sample: UtteranceFeatures,
        prompt: TaskPrompt,
        flags: AblationFlags = NO_ABLATION,
    ) -> ModelOutput:
        emb = self.encode(sample, flags)
        fused = self.fusion.fuse(emb)
        enhanced = self.enhancer.enhance(
            fused.f_fusion, dropped_expert=flags.dropped_expert
        )
        pseudo = self.pseudo(enhanced.f_enhanced)
        wrapped = wrap_input(
            pseudo, prompt, self.text_embedder(), self.config.lm.max_seq_len
        )
        return ModelOutput(wrapped=wrapped, fusion_rep=fused, enhanced_rep=enhanced)

    def lm_logits(self, wrapped_embeddings: Tensor) -> Tensor:
        """Adapter-aware LM forward used by both training and prediction."""
        return self.lm.forward_embedded(wrapped_embeddings, self.adapters)

    def trainable_parameters(self) -> list:
        return [p for p in self.parameters() if not p.frozen]
