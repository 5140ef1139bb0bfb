"""Run configuration: model dims, LM shape, training knobs, presets, hashing.

One JSON document drives everything. ``desk_config`` is the default used by
tests and the CLI — small enough that full training runs finish in seconds
on a laptop core. ``paper_config`` switches the fusion stack to the
published sizes (d_av=256, d_h=512); the language model stays a toy stand-in
either way, so paper-scale runs exercise the same code paths at larger
widths rather than reproducing published scores.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

from egmf.enhancer import EXPERT_SPECS
from egmf.errors import ConfigError
from egmf.toy_lm import ToyLMConfig

ABLATION_FLAGS = (
    "drop_audio",
    "drop_visual",
    "drop_text",
    "drop_expert_1",
    "drop_expert_2",
    "drop_expert_3",
    "no_lora",
)


@dataclass
class ModelConfig:
    d_a: int = 12             # raw audio feature width
    d_v: int = 12             # raw visual feature width
    d_av: int = 16            # audio/visual encoder output (paper: 256)
    d_h: int = 32             # fused width (paper: 512)
    n_fusion_heads: int = 4
    lora_r: int = 8
    lora_alpha: float = 16.0
    expert_ratios: tuple = tuple(r for r, _ in EXPERT_SPECS)
    expert_activations: tuple = tuple(a for _, a in EXPERT_SPECS)

    def __post_init__(self):
        self.expert_ratios = tuple(int(r) for r in self.expert_ratios)
        self.expert_activations = tuple(self.expert_activations)
        if len(self.expert_ratios) != 3 or len(self.expert_activations) != 3:
            raise ConfigError("exactly three experts are supported")
        for r in self.expert_ratios:
            if self.d_h % r != 0:
                raise ConfigError(f"d_h={self.d_h} not divisible by expert ratio {r}")
        if self.d_h % self.n_fusion_heads != 0:
            raise ConfigError(
                f"d_h={self.d_h} not divisible by n_fusion_heads={self.n_fusion_heads}"
            )
        for name in ("d_a", "d_v", "d_av", "lora_r"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 10
    max_steps: int | None = None
    seed: int = 0
    task: str = "classification"
    ablation: tuple = ()
    pretrain_steps: int = 300
    pretrain_lr: float = 3e-3
    pretrain_batch_size: int = 8

    def __post_init__(self):
        self.ablation = tuple(self.ablation)
        if self.task not in ("classification", "regression"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        unknown = [a for a in self.ablation if a not in ABLATION_FLAGS]
        if unknown:
            raise ConfigError(f"unknown ablation flags {unknown}; valid: {ABLATION_FLAGS}")


@dataclass
class EgmfConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    lm: ToyLMConfig = field(default_factory=ToyLMConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "EgmfConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        unknown = set(raw) - {"model", "lm", "train"}
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        sections = {}
        for key, klass in (("model", ModelConfig), ("lm", ToyLMConfig), ("train", TrainConfig)):
            body = raw.get(key, {})
            valid = set(klass.__dataclass_fields__)
            bad = set(body) - valid
            if bad:
                raise ConfigError(f"unknown keys in config section {key!r}: {sorted(bad)}")
            try:
                sections[key] = klass(**body)
            except TypeError as exc:
                raise ConfigError(f"bad config section {key!r}: {exc}") from exc
        return cls(**sections)


def desk_config() -> EgmfConfig:
    return EgmfConfig()


def paper_config() -> EgmfConfig:
    cfg = EgmfConfig()
    cfg.model.d_av = 256
    cfg.model.d_h = 512
    return cfg


def load_config(path) -> EgmfConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return EgmfConfig.from_dict(raw)


def save_config(config: EgmfConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _digest(payload) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def config_hash(config: EgmfConfig) -> str:
    return _digest(config.to_dict())


def lm_config_hash(config: EgmfConfig) -> str:
    """Hash of only what determines a pretrained LM, so one lm.ckpt serves
    any downstream training variation (ablation flags, lr, ...)."""
    t = config.train
    return _digest(
        {
            "lm": asdict(config.lm),
            "pretrain": {
                "steps": t.pretrain_steps,
                "lr": t.pretrain_lr,
                "batch_size": t.pretrain_batch_size,
                "seed": t.seed,
            },
        }
    )
