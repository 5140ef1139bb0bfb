"""Losses, Adam, LM pretraining, task training, evaluation, ablation arms.

Training is plain SGD-style minibatching: per batch the per-sample losses
are scaled by 1/batch_size and backpropagated one at a time (gradients
accumulate in the parameters), then one Adam step runs. Everything is
driven by explicit RngState streams, so a (config, seed, data) triple pins
the entire trajectory bit-for-bit.

The ablation harness retrains the same seed per arm: the full arm with no
flags, modality arms zeroing one encoder output, expert arms renormalizing
the gate over the surviving two experts, and no_lora pinning adapters at
zero. Reports come back per arm with deltas against the full arm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from egmf.config import EgmfConfig, TrainConfig
from egmf.errors import ConfigError, ContractError, DataError
from egmf.metrics import MetricReport, classification_report, regression_report
from egmf.model import AblationFlags, EgmfModel, NO_ABLATION
from egmf.prompts import EOS_ID, TaskPrompt, Vocabulary, build_task_prompt, render_score
from egmf.rng import RngState
from egmf.tensor import Tensor, concat, constant, gather_rows, log_softmax, mul, tsum
from egmf.toy_lm import ToyLM, predict_label, predict_score, wrap_input


# ---------------------------------------------------------------------------
# losses


def cross_entropy_positions(logits: Tensor, positions, gold_ids) -> Tensor:
    """Mean cross-entropy over (position, gold token) pairs of a logit matrix."""
    if len(positions) != len(gold_ids) or not positions:
        raise ContractError("positions and gold_ids must be equal-length and non-empty")
    L, V = logits.shape
    weights = np.zeros((L, V))
    for pos, gold in zip(positions, gold_ids):
        if not 0 <= pos < L:
            raise ContractError(f"position {pos} outside sequence of length {L}")
        if not 0 <= gold < V:
            raise ContractError(f"gold token {gold} outside vocabulary of size {V}")
        weights[pos, gold] -= 1.0 / len(positions)
    return tsum(mul(log_softmax(logits, axis=1), constant(weights)))


def loss_classification(lm: ToyLM, adapters, wrapped, gold_token: int) -> Tensor:
    """Cross-entropy over the full vocabulary at the final position."""
    logits = lm.forward_embedded(wrapped.embeddings, adapters)
    return cross_entropy_positions(logits, [wrapped.length - 1], [gold_token])


def loss_regression(
    lm: ToyLM, adapters, wrapped, score: float, vocab: Vocabulary, prompt: TaskPrompt
) -> Tensor:
    """Teacher-forced mean token cross-entropy over the rendered score string."""
    lo, hi = prompt.score_range
    if not lo <= float(score) <= hi:
        raise DataError(f"gold score {score} outside range [{lo}, {hi}]")
    gold_ids = vocab.score_string_ids(render_score(score)) + [EOS_ID]
    teacher = gather_rows(lm.embedding.tensor, gold_ids[:-1])
    embs = concat([wrapped.embeddings, teacher], axis=0)
    logits = lm.forward_embedded(embs, adapters)
    start = wrapped.length - 1
    positions = [start + t for t in range(len(gold_ids))]
    return cross_entropy_positions(logits, positions, gold_ids)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    def __init__(self, params, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._m = [np.zeros_like(p.values) for p in self.params]
        self._v = [np.zeros_like(p.values) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.frozen or p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.values[...] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# LM pretraining


def sequence_ce(lm: ToyLM, token_ids) -> Tensor:
    """Next-token mean cross-entropy over one sequence (no adapters)."""
    if len(token_ids) < 2:
        raise ContractError("need at least two tokens for next-token loss")
    logits = lm.forward_tokens(token_ids)
    positions = list(range(len(token_ids) - 1))
    return cross_entropy_positions(logits, positions, list(token_ids[1:]))


def pretrain_lm(lm: ToyLM, corpus, cfg: TrainConfig, rng: RngState) -> list:
    """Brief next-token training over the format corpus; returns step losses."""
    if not corpus:
        raise DataError("empty pretraining corpus")
    params = [p for p in lm.parameters() if not p.frozen]
    opt = Adam(params, cfg.pretrain_lr)
    losses = []
    scale = 1.0 / cfg.pretrain_batch_size
    for _ in range(cfg.pretrain_steps):
        opt.zero_grad()
        total = 0.0
        for _ in range(cfg.pretrain_batch_size):
            seq = corpus[rng.randint(len(corpus))]
            loss = sequence_ce(lm, seq) * scale
            total += loss.item()
            loss.backward()
        opt.step()
        losses.append(total)
    return losses


# ---------------------------------------------------------------------------
# task training


def sample_loss(
    model: EgmfModel,
    sample,
    prompt: TaskPrompt,
    vocab: Vocabulary,
    flags: AblationFlags = NO_ABLATION,
) -> Tensor:
    out = model.forward(sample, prompt, flags)
    if prompt.task == "classification":
        gold_token = prompt.label_token_map[int(sample.target)]
        return loss_classification(model.lm, model.adapters, out.wrapped, gold_token)
    return loss_regression(
        model.lm, model.adapters, out.wrapped, float(sample.target), vocab, prompt
    )


@dataclass
class TrainHistory:
    step_losses: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.step_losses)


def train_model(
    model: EgmfModel,
    samples,
    prompt: TaskPrompt,
    vocab: Vocabulary,
    cfg: TrainConfig,
    flags: AblationFlags = NO_ABLATION,
    rng: RngState | None = None,
) -> TrainHistory:
    if not samples:
        raise DataError("empty training set")
    rng = rng if rng is not None else RngState(cfg.seed).derive("train")
    model.apply_ablation(flags)
    trainable = model.trainable_parameters()
    if not trainable:
        raise ConfigError("nothing left to train — every parameter is frozen")
    opt = Adam(trainable, cfg.lr)
    history = TrainHistory()

    for _ in range(cfg.max_epochs):
        order = list(range(len(samples)))
        rng.shuffle(order)
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            opt.zero_grad()
            total = 0.0
            for idx in batch:
                loss = sample_loss(model, samples[idx], prompt, vocab, flags) / len(batch)
                total += loss.item()
                loss.backward()
            opt.step()
            history.step_losses.append(total)
            if cfg.max_steps is not None and history.steps >= cfg.max_steps:
                return history
    return history


# ---------------------------------------------------------------------------
# evaluation


def evaluate_model(
    model: EgmfModel,
    samples,
    prompt: TaskPrompt,
    flags: AblationFlags = NO_ABLATION,
) -> MetricReport:
    if not samples:
        raise DataError("empty evaluation set")
    if prompt.task == "classification":
        preds, golds = [], []
        for sample in samples:
            out = model.forward(sample, prompt, flags)
            preds.append(
                predict_label(model.lm, out.wrapped, model.adapters, prompt.label_token_ids)
            )
            golds.append(int(sample.target))
        return classification_report(preds, golds, len(prompt.label_token_map))

    preds, golds = [], []
    failures = clamps = 0
    for sample in samples:
        out = model.forward(sample, prompt, flags)
        decode = predict_score(model.lm, out.wrapped, model.adapters, prompt.score_range)
        preds.append(decode.value)
        golds.append(float(sample.target))
        failures += int(decode.parse_failure)
        clamps += int(decode.clamped)
    return regression_report(
        preds,
        golds,
        prompt.score_range,
        parse_failure_rate=failures / len(samples),
        clamp_rate=clamps / len(samples),
    )


# ---------------------------------------------------------------------------
# ablation harness


ARM_FULL = "full"


def check_ablation_arms(arm_names):
    """A flag set that removes every modality has nothing left to train on."""
    if {"drop_audio", "drop_visual", "drop_text"} <= set(arm_names):
        raise ConfigError(
            "ablation config drops all three modalities; at least one must remain"
        )


def make_prompt(config: EgmfConfig, vocab: Vocabulary, manifest=None) -> TaskPrompt:
    task = config.train.task
    if task == "classification":
        n_classes = manifest.n_classes if manifest is not None else 7
        return build_task_prompt(vocab, task, n_labels=n_classes)
    score_range = manifest.score_range if manifest is not None else (-1.0, 1.0)
    return build_task_prompt(vocab, task, score_range=tuple(score_range))


@dataclass
class ArmResult:
    arm: str
    report: MetricReport
    delta: dict = field(default_factory=dict)
    history: TrainHistory | None = None


def train_arm(
    config: EgmfConfig,
    train_samples,
    prompt: TaskPrompt,
    vocab: Vocabulary,
    lm_state: dict,
    flags: AblationFlags = NO_ABLATION,
) -> tuple:
    """Fresh model from the config seed, pretrained LM loaded frozen, then trained.

    Both the plain training entry point and every ablation arm go through
    here, so the zero-flag arm is bit-identical to an ordinary run.
    """
    model = EgmfModel(config, RngState(config.train.seed))
    model.lm.load_state_arrays(lm_state)
    model.lm.freeze()
    history = train_model(
        model, train_samples, prompt, vocab, config.train, flags,
        rng=RngState(config.train.seed).derive("train"),
    )
    return model, history


def run_ablation(
    config: EgmfConfig,
    train_samples,
    eval_samples,
    vocab: Vocabulary,
    lm_state: dict,
    prompt: TaskPrompt,
    arms=None,
) -> list:
    """Train one model per arm from a shared seed and LM state; report deltas."""
    arm_names = list(arms) if arms is not None else list(config.train.ablation)
    check_ablation_arms(arm_names)
    results = []
    for arm in [ARM_FULL] + arm_names:
        flags = NO_ABLATION if arm == ARM_FULL else AblationFlags.from_names([arm])
        model, history = train_arm(config, train_samples, prompt, vocab, lm_state, flags)
        report = evaluate_model(model, eval_samples, prompt, flags)
        results.append(ArmResult(arm=arm, report=report, history=history))

    base = results[0].report.to_dict()
    for res in results[1:]:
        own = res.report.to_dict()
        res.delta = {
            k: own[k] - base[k]
            for k, v in own.items()
            if isinstance(v, float) and isinstance(base.get(k), float)
        }
    return results


def ablation_csv(results) -> str:
    lines = ["arm,metric,value,delta"]
    for res in results:
        for key, val in sorted(res.report.to_dict().items()):
            if not isinstance(val, float):
                continue
            delta = res.delta.get(key, 0.0)
            lines.append(f"{res.arm},{key},{val:.6f},{delta:.6f}")
    return "\n".join(lines) + "\n"
