"""Evaluation metrics for emotion classification and sentiment regression.

Edge conventions (pinned because every library picks differently):

* per-class precision/recall/F1 define 0/0 = 0;
* weighted F1 weights classes by gold support, so empty classes vanish;
* acc2 measures sign agreement over samples with nonzero gold only;
* acc2_weak scores the binary split negative vs non-negative over all
  samples (zero gold counts as non-negative);
* acc7 clamps to [-3, 3] and rounds half away from zero into 7 integer
  bins — reported only for datasets on that range;
* pearson is defined as 0 when either side has zero variance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from egmf.errors import ContractError


def _check_pair(preds, golds, min_len=1):
    p = np.asarray(preds)
    g = np.asarray(golds)
    if p.shape != g.shape or p.ndim != 1:
        raise ContractError(f"prediction/gold shape mismatch: {p.shape} vs {g.shape}")
    if p.size < min_len:
        raise ContractError(f"need at least {min_len} samples, got {p.size}")
    return p, g


def accuracy(preds, golds) -> float:
    p, g = _check_pair(preds, golds)
    return float(np.mean(p == g))


def per_class_f1(preds, golds, n_classes: int) -> list:
    p, g = _check_pair(preds, golds)
    out = []
    for c in range(n_classes):
        tp = int(np.sum((p == c) & (g == c)))
        fp = int(np.sum((p == c) & (g != c)))
        fn = int(np.sum((p != c) & (g == c)))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        out.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return out


def weighted_f1(preds, golds, n_classes: int) -> float:
    p, g = _check_pair(preds, golds)
    f1s = per_class_f1(p, g, n_classes)
    total = 0.0
    for c in range(n_classes):
        support = int(np.sum(g == c))
        total += support * f1s[c]
    return total / p.size


def mae(preds, golds) -> float:
    p, g = _check_pair(preds, golds)
    return float(np.mean(np.abs(p - g)))


def pearson(preds, golds) -> float:
    p, g = _check_pair(preds, golds, min_len=2)
    pc = p - p.mean()
    gc = g - g.mean()
    denom = math.sqrt(float(np.sum(pc * pc)) * float(np.sum(gc * gc)))
    if denom == 0.0:
        return 0.0
    return float(np.sum(pc * gc) / denom)


def seven_bin(x) -> np.ndarray:
    """Clamp to [-3, 3] and round half away from zero to an integer bin."""
    clipped = np.clip(np.asarray(x, dtype=np.float64), -3.0, 3.0)
    return np.copysign(np.floor(np.abs(clipped) + 0.5), clipped).astype(int)


def acc2(preds, golds) -> float:
    p, g = _check_pair(preds, golds)
    nonzero = g != 0
    if not np.any(nonzero):
        return 0.0
    return float(np.mean(np.sign(p[nonzero]) == np.sign(g[nonzero])))


def acc2_weak(preds, golds) -> float:
    p, g = _check_pair(preds, golds)
    return float(np.mean((p >= 0) == (g >= 0)))


def acc7(preds, golds) -> float:
    p, g = _check_pair(preds, golds)
    return float(np.mean(seven_bin(p) == seven_bin(g)))


def sentiment_metrics(preds, golds, score_range) -> dict:
    lo, hi = float(score_range[0]), float(score_range[1])
    report = {
        "acc2": acc2(preds, golds),
        "acc2_weak": acc2_weak(preds, golds),
        "acc7": acc7(preds, golds) if (lo, hi) == (-3.0, 3.0) else None,
        "mae": mae(preds, golds),
        "pearson": pearson(preds, golds) if len(preds) >= 2 else 0.0,
    }
    return report


@dataclass
class MetricReport:
    n_samples: int
    task: str
    accuracy: float | None = None
    weighted_f1: float | None = None
    per_class_f1: list | None = None
    acc2: float | None = None
    acc2_weak: float | None = None
    acc7: float | None = None
    mae: float | None = None
    pearson: float | None = None
    parse_failure_rate: float = 0.0
    clamp_rate: float = 0.0
    mean_loss: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = [(k, v) for k, v in self.to_dict().items() if v is not None and k != "per_class_f1"]
        width = max(len(k) for k, _ in rows)
        lines = []
        for k, v in rows:
            shown = f"{v:.6f}" if isinstance(v, float) else str(v)
            lines.append(f"{k:<{width}}  {shown}")
        if self.per_class_f1 is not None:
            shown = " ".join(f"{v:.4f}" for v in self.per_class_f1)
            lines.append(f"{'per_class_f1':<{width}}  {shown}")
        return "\n".join(lines)


def classification_report(preds, golds, n_classes, parse_failure_rate=0.0) -> MetricReport:
    return MetricReport(
        n_samples=len(preds),
        task="classification",
        accuracy=accuracy(preds, golds),
        weighted_f1=weighted_f1(preds, golds, n_classes),
        per_class_f1=per_class_f1(preds, golds, n_classes),
        parse_failure_rate=parse_failure_rate,
    )


def regression_report(preds, golds, score_range, parse_failure_rate=0.0, clamp_rate=0.0) -> MetricReport:
    stats = sentiment_metrics(preds, golds, score_range)
    return MetricReport(
        n_samples=len(preds),
        task="regression",
        acc2=stats["acc2"],
        acc2_weak=stats["acc2_weak"],
        acc7=stats["acc7"],
        mae=stats["mae"],
        pearson=stats["pearson"],
        parse_failure_rate=parse_failure_rate,
        clamp_rate=clamp_rate,
    )
