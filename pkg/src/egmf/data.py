"""Synthetic multimodal datasets, manifests, loaders, pretraining corpus.

Every sample hides one latent (a class label or a sentiment score) that
leaks into each modality with a configurable strength:

* text — each position emits the latent's signal word with probability
  s_t, otherwise a random filler word;
* audio/visual — rows are s_m * (latent direction) + Gaussian noise, with
  one fixed random unit prototype per class (classification) or a single
  direction scaled by the normalized score (regression).

Setting s_a = s_v = 0, s_t = 1 therefore builds a corpus where only text
carries signal — the construction behind the modality-ablation checks.

On disk a dataset is a directory: manifest.json, vocab.txt, one JSONL file
per split ({"text": [...], "audio": [[...]], "visual": [[...]],
"target": ...}), prompt template files, and pretrain.jsonl with token
sequences ({"tokens": [...]}) teaching the LM the prompt/answer format
(random answers — format only, no task signal).
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from egmf.encoders import UtteranceFeatures
from egmf.errors import ConfigError, DataError
from egmf.prompts import (
    DEFAULT_TEMPLATE,
    EOS_ID,
    Vocabulary,
    build_task_prompt,
    render_score,
)
from egmf.rng import RngState

FILLER_WORDS = tuple(f"w{i}" for i in range(24))
CLASS_WORDS = tuple(f"emo{k}" for k in range(16))
BIN_WORDS = tuple(f"sent{b}" for b in range(7))


@dataclass
class SyntheticSpec:
    task: str = "classification"
    n_train: int = 64
    n_valid: int = 32
    n_test: int = 32
    n_classes: int = 7
    score_range: tuple = (-1.0, 1.0)
    s_t: float = 1.0
    s_a: float = 0.5
    s_v: float = 0.5
    noise_sigma: float = 0.5
    d_a: int = 12
    d_v: int = 12
    len_text: tuple = (6, 10)
    len_audio: tuple = (4, 8)
    len_visual: tuple = (4, 8)
    seed: int = 0
    n_pretrain: int = 512
    vocab_size: int = 512

    def __post_init__(self):
        self.score_range = (float(self.score_range[0]), float(self.score_range[1]))
        self.len_text = tuple(self.len_text)
        self.len_audio = tuple(self.len_audio)
        self.len_visual = tuple(self.len_visual)
        if self.task not in ("classification", "regression"):
            raise ConfigError(f"unknown task {self.task!r}")
        if not (self.s_t > 0 or self.s_a > 0 or self.s_v > 0):
            raise ConfigError("at least one modality signal strength must be > 0")
        for name in ("s_t", "s_a", "s_v"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if not 2 <= self.n_classes <= 16:
            raise ConfigError("n_classes must be in 2..16 (reserved label slots)")


def spec_from_dict(raw) -> SyntheticSpec:
    if not isinstance(raw, dict):
        raise DataError("synthetic spec must be a JSON object")
    allowed = {f.name for f in fields(SyntheticSpec)}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise DataError(f"unknown synthetic spec keys: {unknown}")
    try:
        return SyntheticSpec(**raw)
    except ConfigError as exc:
        raise DataError(f"invalid synthetic spec: {exc}") from exc


def load_spec(path) -> SyntheticSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"synthetic spec not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc
    return spec_from_dict(raw)


def build_dataset_vocabulary(spec: SyntheticSpec) -> Vocabulary:
    words = list(FILLER_WORDS) + list(CLASS_WORDS[: spec.n_classes]) + list(BIN_WORDS)
    return Vocabulary.build(spec.vocab_size, words=words)


def _unit_prototype(rng: RngState, dim: int) -> np.ndarray:
    v = rng.normal((dim,))
    return v / np.linalg.norm(v)


class _SampleFactory:
    """Draws UtteranceFeatures for one split with a dedicated RNG stream."""

    def __init__(self, spec: SyntheticSpec, vocab: Vocabulary, split: str):
        self.spec = spec
        self.vocab = vocab
        self.rng = RngState(spec.seed).derive(f"split:{split}")
        base = RngState(spec.seed)
        if spec.task == "classification":
            self.protos_a = [
                _unit_prototype(base.derive(f"proto:audio:{y}"), spec.d_a)
                for y in range(spec.n_classes)
            ]
            self.protos_v = [
                _unit_prototype(base.derive(f"proto:visual:{y}"), spec.d_v)
                for y in range(spec.n_classes)
            ]
        else:
            self.protos_a = [_unit_prototype(base.derive("proto:audio"), spec.d_a)]
            self.protos_v = [_unit_prototype(base.derive("proto:visual"), spec.d_v)]
        self.filler_ids = [vocab.token_to_id(w) for w in FILLER_WORDS]
        self.class_ids = [vocab.token_to_id(w) for w in CLASS_WORDS[: spec.n_classes]]
        self.bin_ids = [vocab.token_to_id(w) for w in BIN_WORDS]

    def _length(self, bounds) -> int:
        lo, hi = bounds
        return lo + self.rng.randint(hi - lo + 1)

    def _text(self, strength: float, signal_id: int) -> list:
        n = self._length(self.spec.len_text)
        out = []
        for _ in range(n):
            if self.rng.uniform(()) < strength:
                out.append(signal_id)
            else:
                out.append(self.filler_ids[self.rng.randint(len(self.filler_ids))])
        return out

    def _seq(self, bounds, dim, strength, direction) -> np.ndarray:
        n = self._length(bounds)
        rows = np.empty((n, dim))
        for r in range(n):
            rows[r] = strength * direction + self.spec.noise_sigma * self.rng.normal((dim,))
        return rows

    def draw(self) -> UtteranceFeatures:
        spec = self.spec
        if spec.task == "classification":
            y = self.rng.randint(spec.n_classes)
            text = self._text(spec.s_t, self.class_ids[y])
            audio = self._seq(spec.len_audio, spec.d_a, spec.s_a, self.protos_a[y])
            visual = self._seq(spec.len_visual, spec.d_v, spec.s_v, self.protos_v[y])
            return UtteranceFeatures(text, audio, visual, int(y))
        lo, hi = spec.score_range
        n_grid = int(round((hi - lo) / 0.1))
        k = self.rng.randint(n_grid + 1)
        score = (round(lo * 10) + k) / 10.0
        scaled = score / max(abs(lo), abs(hi))
        b = int(round((score - lo) / (hi - lo) * 6))
        text = self._text(spec.s_t, self.bin_ids[b])
        audio = self._seq(spec.len_audio, spec.d_a, spec.s_a * scaled, self.protos_a[0])
        visual = self._seq(spec.len_visual, spec.d_v, spec.s_v * scaled, self.protos_v[0])
        return UtteranceFeatures(text, audio, visual, float(score))


def generate_samples(spec: SyntheticSpec, split: str) -> list:
    count = {"train": spec.n_train, "valid": spec.n_valid, "test": spec.n_test}[split]
    factory = _SampleFactory(spec, build_dataset_vocabulary(spec), split)
    return [factory.draw() for _ in range(count)]


def generate_pretrain_corpus(spec: SyntheticSpec, vocab: Vocabulary) -> list:
    """Prompt-format token sequences with random answers for LM warm-up."""
    rng = RngState(spec.seed).derive("pretrain")
    filler = [vocab.token_to_id(w) for w in FILLER_WORDS]
    prompt_c = build_task_prompt(vocab, "classification", n_labels=spec.n_classes)
    prompt_r = build_task_prompt(vocab, "regression", score_range=(-3.0, 3.0))
    seqs = []
    for i in range(spec.n_pretrain):
        body = [filler[rng.randint(len(filler))] for _ in range(4 + rng.randint(5))]
        if i % 2 == 0:
            y = rng.randint(spec.n_classes)
            seq = (
                prompt_c.prefix_ids
                + body
                + prompt_c.suffix_ids
                + prompt_c.task_ids
                + [vocab.label_token(y), EOS_ID]
            )
        else:
            k = rng.randint(61)
            score = (k - 30) / 10.0
            seq = (
                prompt_r.prefix_ids
                + body
                + prompt_r.suffix_ids
                + prompt_r.task_ids
                + vocab.score_string_ids(render_score(score))
                + [EOS_ID]
            )
        seqs.append(seq)
    return seqs


@dataclass
class DatasetManifest:
    name: str
    language: str
    task: str                      # "ERC" (classification) or "MSA" (regression)
    d_a: int
    d_v: int
    vocab: str
    splits: dict
    templates: dict = field(default_factory=dict)
    n_classes: int | None = None
    score_range: tuple | None = None
    pretrain: dict | None = None
    spec: dict | None = None

    @property
    def task_kind(self) -> str:
        return "classification" if self.task == "ERC" else "regression"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "DatasetManifest":
        bad = set(raw) - set(cls.__dataclass_fields__)
        if bad:
            raise DataError(f"unknown manifest keys {sorted(bad)}")
        try:
            mani = cls(**raw)
        except TypeError as exc:
            raise DataError(f"bad manifest: {exc}") from exc
        if mani.task not in ("ERC", "MSA"):
            raise DataError(f"manifest task must be ERC or MSA, got {mani.task!r}")
        if mani.task == "ERC" and not mani.n_classes:
            raise DataError("ERC manifest needs n_classes")
        if mani.task == "MSA":
            if mani.score_range is None:
                raise DataError("MSA manifest needs score_range")
            mani.score_range = tuple(float(x) for x in mani.score_range)
            if mani.score_range not in ((-1.0, 1.0), (-3.0, 3.0)):
                raise DataError(
                    f"score_range must be [-1,1] or [-3,3], got {list(mani.score_range)}"
                )
        return mani


def _write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def generate_synthetic(spec: SyntheticSpec, out_dir) -> DatasetManifest:
    """Write a full dataset directory; byte-identical for identical specs."""
    os.makedirs(out_dir, exist_ok=True)
    vocab = build_dataset_vocabulary(spec)
    vocab.save(os.path.join(out_dir, "vocab.txt"))

    templates = {}
    for task in ("classification", "regression"):
        fname = f"template_{task}.txt"
        with open(os.path.join(out_dir, fname), "w", encoding="utf-8") as fh:
            fh.write(DEFAULT_TEMPLATE + "\n")
        templates[task] = fname

    splits = {}
    for split in ("train", "valid", "test"):
        samples = generate_samples(spec, split)
        rows = [
            {
                "text": s.text_tokens,
                "audio": np.asarray(s.audio_seq).tolist(),
                "visual": np.asarray(s.visual_seq).tolist(),
                "target": s.target,
            }
            for s in samples
        ]
        fname = f"{split}.jsonl"
        _write_jsonl(os.path.join(out_dir, fname), rows)
        splits[split] = {"path": fname, "n": len(rows)}

    corpus = generate_pretrain_corpus(spec, vocab)
    _write_jsonl(os.path.join(out_dir, "pretrain.jsonl"), [{"tokens": s} for s in corpus])

    manifest = DatasetManifest(
        name=f"synthetic-{spec.task}-{spec.seed}",
        language="synthetic",
        task="ERC" if spec.task == "classification" else "MSA",
        d_a=spec.d_a,
        d_v=spec.d_v,
        vocab="vocab.txt",
        splits=splits,
        templates=templates,
        n_classes=spec.n_classes if spec.task == "classification" else None,
        score_range=list(spec.score_range) if spec.task == "regression" else None,
        pretrain={"path": "pretrain.jsonl", "n": len(corpus)},
        spec=asdict(spec),
    )
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_manifest(path) -> DatasetManifest:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"manifest not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc
    return DatasetManifest.from_dict(raw)


def load_vocabulary(manifest_path, manifest: DatasetManifest | None = None) -> Vocabulary:
    if manifest is None:
        manifest = load_manifest(manifest_path)
    return Vocabulary.load(os.path.join(os.path.dirname(manifest_path), manifest.vocab))


def _validate_record(raw, lineno, path, manifest, vocab_size):
    ctx = f"{path}:{lineno}"
    for key in ("text", "audio", "visual", "target"):
        if key not in raw:
            raise DataError(f"{ctx}: missing field {key!r}")
    text = raw["text"]
    if not isinstance(text, list) or not text:
        raise DataError(f"{ctx}: field 'text' must be a non-empty token id list")
    for t in text:
        if not isinstance(t, int) or not 0 <= t < vocab_size:
            raise DataError(f"{ctx}: token id {t!r} outside vocabulary of size {vocab_size}")
    arrays = {}
    for key, width in (("audio", manifest.d_a), ("visual", manifest.d_v)):
        try:
            arr = np.asarray(raw[key], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise DataError(f"{ctx}: field {key!r} is not a float matrix: {exc}") from exc
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise DataError(f"{ctx}: field {key!r} must be a non-empty 2-D matrix")
        if arr.shape[1] != width:
            raise DataError(
                f"{ctx}: field {key!r} width {arr.shape[1]} != manifest d {width}"
            )
        if not np.all(np.isfinite(arr)):
            raise DataError(f"{ctx}: non-finite value in field {key!r}")
        arrays[key] = arr
    target = raw["target"]
    if manifest.task == "ERC":
        if not isinstance(target, int) or not 0 <= target < manifest.n_classes:
            raise DataError(
                f"{ctx}: target {target!r} not a label in 0..{manifest.n_classes - 1}"
            )
    else:
        lo, hi = manifest.score_range
        if not isinstance(target, (int, float)) or not lo <= float(target) <= hi:
            raise DataError(f"{ctx}: target {target!r} outside score range [{lo}, {hi}]")
        target = float(target)
    return UtteranceFeatures(list(text), arrays["audio"], arrays["visual"], target)


def load_split(manifest_path, manifest: DatasetManifest, split: str) -> list:
    if split not in manifest.splits:
        raise DataError(f"manifest has no split {split!r}")
    meta = manifest.splits[split]
    path = os.path.join(os.path.dirname(manifest_path), meta["path"])
    vocab_size = len(load_vocabulary(manifest_path, manifest))
    records = []
    try:
        fh = open(path, encoding="utf-8")
    except FileNotFoundError as exc:
        raise DataError(f"split file not found: {path}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            records.append(_validate_record(raw, lineno, path, manifest, vocab_size))
    if len(records) != meta["n"]:
        raise DataError(
            f"{path}: manifest promises {meta['n']} records, found {len(records)}"
        )
    return records


def load_dataset(manifest_path, split: str = "train") -> list:
    manifest = load_manifest(manifest_path)
    return load_split(manifest_path, manifest, split)


def load_pretrain_corpus(manifest_path, manifest: DatasetManifest | None = None) -> list:
    if manifest is None:
        manifest = load_manifest(manifest_path)
    if not manifest.pretrain:
        raise DataError("manifest has no pretraining corpus")
    path = os.path.join(os.path.dirname(manifest_path), manifest.pretrain["path"])
    vocab_size = len(load_vocabulary(manifest_path, manifest))
    seqs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            tokens = raw.get("tokens")
            if not isinstance(tokens, list) or not tokens:
                raise DataError(f"{path}:{lineno}: missing non-empty 'tokens' list")
            for t in tokens:
                if not isinstance(t, int) or not 0 <= t < vocab_size:
                    raise DataError(f"{path}:{lineno}: bad token id {t!r}")
            seqs.append(tokens)
    return seqs
