"""Tiny frozen decoder-only LM with LoRA adapters and pseudo-token injection.

The generator is a 2-layer Pre-LN causal transformer over a 512-token
vocabulary. It is pretrained briefly on a synthetic corpus, then frozen;
the only trainable pieces that touch it afterwards are low-rank adapters
on every attention query/value projection and the pseudo-token projector
that maps the enhanced fusion vector into n_tokens identical embedding
rows. Inputs are wrapped as [prefix; pseudo; suffix; task] and predictions
are read generatively: a restricted argmax over reserved label tokens for
classification, greedy constrained decoding of a score string for
regression.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from egmf.encoders import TextEmbedder
from egmf.errors import ConfigError, SequenceLengthError
from egmf.nn import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention, causal_mask
from egmf.prompts import (
    EOS_ID,
    SCORE_BASE,
    SCORE_CHARS,
    TaskPrompt,
    parse_score,
)
from egmf.rng import RngState
from egmf.tensor import (
    Parameter,
    Tensor,
    add,
    concat,
    constant,
    gather_rows,
    init_parameter,
    matmul,
    stack_rows,
    transpose,
)


@dataclass
class ToyLMConfig:
    vocab_size: int = 512
    d_emb: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_seq_len: int = 128
    n_tokens: int = 4

    def __post_init__(self):
        if self.d_emb % self.n_heads != 0:
            raise ConfigError(
                f"d_emb={self.d_emb} not divisible by n_heads={self.n_heads}"
            )
        if self.n_tokens < 1:
            raise ConfigError(f"n_tokens must be >= 1, got {self.n_tokens}")
        if self.vocab_size < 32:
            raise ConfigError("vocab_size too small for the reserved token layout")


def sinusoidal_positions(max_len: int, d: int) -> np.ndarray:
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    idx = np.arange(0, d, 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, idx / d)
    pe = np.zeros((max_len, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : d // 2])
    return pe


class LoraAdapter(Module):
    """Low-rank delta for one frozen weight: x -> (x A^T) B^T * (alpha/r).

    B starts at zero so the adapted forward equals the frozen forward until
    the first update; the merged form is W + (alpha/r) * B @ A.
    """

    def __init__(self, target: str, d_in: int, d_out: int, r: int, alpha: float, rng: RngState):
        if r < 1:
            raise ConfigError(f"LoRA rank must be >= 1, got {r}")
        self.target = target
        self.r = r
        self.alpha = float(alpha)
        self.A = Parameter(init_parameter((r, d_in), "xavier_uniform", rng))
        self.B = Parameter(init_parameter((d_out, r), "zeros"))

    @property
    def scaling(self) -> float:
        return self.alpha / self.r

    def delta(self, x: Tensor) -> Tensor:
        low = matmul(x, transpose(self.A.tensor))
        return matmul(low, transpose(self.B.tensor)) * self.scaling

    def merge_into(self, weight: np.ndarray) -> np.ndarray:
        return weight + self.scaling * (self.B.values @ self.A.values)


class AdapterSet(Module):
    """One (q, v) adapter pair per decoder layer."""

    def __init__(self, config: ToyLMConfig, rng: RngState, r: int = 8, alpha: float = 16.0):
        d = config.d_emb
        self.r = r
        self.alpha = float(alpha)
        self.q_adapters = [
            LoraAdapter(f"blocks.{i}.attn.wq.weight", d, d, r, alpha, rng)
            for i in range(config.n_layers)
        ]
        self.v_adapters = [
            LoraAdapter(f"blocks.{i}.attn.wv.weight", d, d, r, alpha, rng)
            for i in range(config.n_layers)
        ]

    def get(self, layer: int, kind: str):
        adapters = self.q_adapters if kind == "q" else self.v_adapters
        return adapters[layer] if layer < len(adapters) else None

    def clear(self):
        self.q_adapters = []
        self.v_adapters = []

    def freeze_at_zero(self):
        """Pin every adapter to the zero delta (the no-LoRA ablation arm)."""
        for p in self.parameters():
            p.values[...] = 0.0
            p.freeze()


class DecoderBlock(Module):
    def __init__(self, d_emb: int, n_heads: int, rng: RngState):
        self.ln1 = LayerNorm(d_emb)
        self.attn = MultiHeadAttention(d_emb, n_heads, rng)
        self.ln2 = LayerNorm(d_emb)
        self.ffn = FeedForward(d_emb, 4 * d_emb, rng, act="gelu")

    def __call__(self, x: Tensor, mask, q_adapter=None, v_adapter=None) -> Tensor:
        normed = self.ln1(x)
        attn_out, _ = self.attn(
            normed, normed, mask=mask, q_adapter=q_adapter, v_adapter=v_adapter
        )
        x = add(x, attn_out)
        return add(x, self.ffn(self.ln2(x)))


class ToyLM(Module):
    def __init__(self, config: ToyLMConfig, rng: RngState):
        self.config = config
        self.embedding = Parameter(
            init_parameter((config.vocab_size, config.d_emb), "xavier_uniform", rng)
        )
        self.blocks = [
            DecoderBlock(config.d_emb, config.n_heads, rng)
            for _ in range(config.n_layers)
        ]
        self.ln_final = LayerNorm(config.d_emb)
        self.head = Linear(config.d_emb, config.vocab_size, rng)
        self._pe = sinusoidal_positions(config.max_seq_len, config.d_emb)

    def embedder(self) -> TextEmbedder:
        return TextEmbedder(self.embedding)

    def forward_embedded(self, embs: Tensor, adapters: AdapterSet | None = None) -> Tensor:
        """Causal forward over an embedding sequence; returns [L, vocab] logits."""
        L = embs.shape[0]
        if L < 1:
            raise SequenceLengthError("empty input sequence")
        if L > self.config.max_seq_len:
            raise SequenceLengthError(
                f"sequence length {L} exceeds max_seq_len {self.config.max_seq_len}"
            )
        x = add(embs, constant(self._pe[:L]))
        mask = causal_mask(L)
        for i, block in enumerate(self.blocks):
            q_ad = adapters.get(i, "q") if adapters is not None else None
            v_ad = adapters.get(i, "v") if adapters is not None else None
            x = block(x, mask, q_adapter=q_ad, v_adapter=v_ad)
        return self.head(self.ln_final(x))

    def forward_tokens(self, token_ids, adapters: AdapterSet | None = None) -> Tensor:
        embs = gather_rows(self.embedding.tensor, [int(t) for t in token_ids])
        return self.forward_embedded(embs, adapters)


class PseudoProjector(Module):
    """f_enhanced -> n_tokens identical rows of the LM embedding width."""

    def __init__(self, d_h: int, d_emb: int, n_tokens: int, rng: RngState):
        self.n_tokens = n_tokens
        self.proj = Linear(d_h, d_emb, rng)

    def __call__(self, f_enhanced: Tensor) -> Tensor:
        row = self.proj(f_enhanced)
        return stack_rows([row] * self.n_tokens)


@dataclass
class WrappedInput:
    embeddings: Tensor      # [L, d_emb]
    segments: dict          # segment name -> (start, stop) position span
    token_ids: dict = field(default_factory=dict)  # ids per non-pseudo segment

    @property
    def pseudo_span(self) -> tuple:
        return self.segments["pseudo"]

    @property
    def length(self) -> int:
        return self.embeddings.shape[0]


def wrap_input(
    pseudo: Tensor, prompt: TaskPrompt, embedder: TextEmbedder, max_seq_len: int
) -> WrappedInput:
    """Assemble [prefix; pseudo; suffix; task] and record the segment spans."""
    n = pseudo.shape[0]
    seg_ids = (
        ("prefix", prompt.prefix_ids),
        ("suffix", prompt.suffix_ids),
        ("task", prompt.task_ids),
    )
    total = n + sum(len(ids) for _, ids in seg_ids)
    if total > max_seq_len:
        raise SequenceLengthError(
            f"wrapped input length {total} exceeds max_seq_len {max_seq_len}"
        )

    parts, segments, pos = [], {}, 0

    def put(name, ids):
        nonlocal pos
        if ids:
            parts.append(embedder(ids))
        segments[name] = (pos, pos + len(ids))
        pos += len(ids)

    put("prefix", prompt.prefix_ids)
    parts.append(pseudo)
    segments["pseudo"] = (pos, pos + n)
    pos += n
    put("suffix", prompt.suffix_ids)
    put("task", prompt.task_ids)

    return WrappedInput(
        embeddings=concat(parts, axis=0),
        segments=segments,
        token_ids={
            "prefix": list(prompt.prefix_ids),
            "suffix": list(prompt.suffix_ids),
            "task": list(prompt.task_ids),
        },
    )


def predict_label(
    lm: ToyLM, wrapped: WrappedInput, adapters: AdapterSet | None, label_token_ids
) -> int:
    """Restricted argmax over label tokens at the final position.

    Returns the label *index* (position in label_token_ids); exact ties go
    to the lowest index because argmax keeps the first maximum.
    """
    logits = lm.forward_embedded(wrapped.embeddings.detach(), adapters).values[-1]
    restricted = logits[list(label_token_ids)]
    return int(np.argmax(restricted))


@dataclass
class ScoreDecode:
    value: float
    text: str
    parse_failure: bool = False
    clamped: bool = False


def predict_score(
    lm: ToyLM,
    wrapped: WrappedInput,
    adapters: AdapterSet | None,
    score_range: tuple,
    max_chars: int = 6,
) -> ScoreDecode:
    """Greedy decoding constrained to score characters and <eos>, then parse.

    Malformed output parses to 0.0 with the failure flag set; out-of-range
    values clamp to the dataset range with the clamp flag set.
    """
    lo, hi = float(score_range[0]), float(score_range[1])
    allowed = list(range(SCORE_BASE, SCORE_BASE + 12)) + [EOS_ID]
    embs = wrapped.embeddings.detach()
    chars = []
    for _ in range(max_chars):
        if embs.shape[0] >= lm.config.max_seq_len:
            break
        logits = lm.forward_embedded(embs, adapters).values[-1]
        pick = allowed[int(np.argmax(logits[allowed]))]
        if pick == EOS_ID:
            break
        chars.append(SCORE_CHARS[pick - SCORE_BASE])
        embs = concat([embs, gather_rows(lm.embedding.tensor, [pick]).detach()], axis=0)

    text = "".join(chars)
    try:
        value = parse_score(text)
        failure = False
    except ValueError:
        return ScoreDecode(value=0.0, text=text, parse_failure=True)
    clamped = False
    if value < lo:
        value, clamped = lo, True
    elif value > hi:
        value, clamped = hi, True
    return ScoreDecode(value=value, text=text, parse_failure=failure, clamped=clamped)


def merge_adapters(lm: ToyLM, adapters: AdapterSet) -> dict:
    """Fold every adapter into a copy of the frozen weights, then clear.

    Returns a full state-array dict for a ToyLM of the same config whose
    plain forward matches the adapter forward.
    """
    state = lm.state_arrays()
    for kind, group in (("q", adapters.q_adapters), ("v", adapters.v_adapters)):
        for ad in group:
            if ad.target not in state:
                raise ConfigError(f"adapter targets unknown parameter {ad.target!r}")
            if not np.all(np.isfinite(ad.A.values)) or not np.all(np.isfinite(ad.B.values)):
                raise ConfigError(f"non-finite adapter values for {ad.target!r}")
            state[ad.target] = ad.merge_into(state[ad.target])
    adapters.clear()
    return state
