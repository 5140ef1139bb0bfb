"""Per-modality input encoders.

Audio and visual streams arrive as [L, d_in] float sequences and leave as
single d_av vectors: temporal mean-pool first (permutation invariant), then
a two-layer GELU MLP. Text arrives as token ids and is embedded with the
generator's own frozen embedding table, so the fusion stage works in the
same representation space the language model was pretrained with.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from egmf.errors import (
    ConfigError,
    DataError,
    SequenceLengthError,
    ShapeError,
    VocabularyError,
)
from egmf.nn import Linear, Module
from egmf.rng import RngState
from egmf.tensor import Parameter, Tensor, gather_rows, gelu, tensor, tmean


@dataclass
class UtteranceFeatures:
    """One labelled utterance: token ids plus audio/visual feature sequences.

    ``target`` is an emotion label id for classification datasets or a float
    sentiment score for regression datasets.
    """

    text_tokens: list
    audio_seq: np.ndarray
    visual_seq: np.ndarray
    target: object

    def validate(self, score_range: tuple | None = None, context: str = "utterance"):
        if len(self.text_tokens) < 1:
            raise DataError(f"{context}: empty text token sequence")
        for which, seq in (("audio", self.audio_seq), ("visual", self.visual_seq)):
            arr = np.asarray(seq, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[0] < 1:
                raise DataError(f"{context}: {which} sequence must be a non-empty 2-D array")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{context}: non-finite value in {which} features")
        if score_range is not None:
            lo, hi = score_range
            if not (lo <= float(self.target) <= hi):
                raise DataError(
                    f"{context}: sentiment target {self.target} outside [{lo}, {hi}]"
                )


@dataclass
class ModalityEmbeddings:
    """Encoder outputs: f_t is a token sequence, f_a / f_v are vectors."""

    f_t: Tensor
    f_a: Tensor
    f_v: Tensor


class AudioVisualEncoder(Module):
    """Mean-pool over time, then MLP d_in -> d_av -> d_av with GELU between."""

    def __init__(self, d_in: int, d_av: int, rng: RngState):
        self.d_in = d_in
        self.d_av = d_av
        self.w_in = Linear(d_in, d_av, rng)
        self.w_out = Linear(d_av, d_av, rng)

    def __call__(self, seq) -> Tensor:
        arr = np.asarray(seq, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ShapeError(f"encoder input must be [L, d_in], got shape {arr.shape}")
        if arr.shape[1] != self.d_in:
            raise ConfigError(
                f"encoder configured for d_in={self.d_in}, got features of width {arr.shape[1]}"
            )
        pooled = tmean(tensor(arr), axis=0)
        out = self.w_out(gelu(self.w_in(pooled)))
        if out.shape != (self.d_av,):
            raise ShapeError(f"encoder output shape {out.shape}, expected ({self.d_av},)")
        return out


class TextEmbedder:
    """Embedding-table lookup. The table is owned (and frozen) by the LM."""

    def __init__(self, table: Parameter):
        if table.tensor.ndim != 2:
            raise ConfigError("embedding table must be 2-D [vocab, d_emb]")
        self.table = table

    @property
    def vocab_size(self) -> int:
        return self.table.tensor.shape[0]

    @property
    def d_emb(self) -> int:
        return self.table.tensor.shape[1]

    def __call__(self, token_ids) -> Tensor:
        ids = [int(i) for i in token_ids]
        if not ids:
            raise SequenceLengthError("cannot embed an empty token sequence")
        for i in ids:
            if not 0 <= i < self.vocab_size:
                raise VocabularyError(
                    f"token id {i} outside vocabulary of size {self.vocab_size}"
                )
        return gather_rows(self.table.tensor, ids)
