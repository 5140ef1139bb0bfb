"""Losses, Adam, and the training/evaluation/ablation loops."""

import math

import numpy as np
import pytest

from egmf.config import desk_config
from egmf.data import (
    SyntheticSpec,
    build_dataset_vocabulary,
    generate_pretrain_corpus,
    generate_samples,
)
from egmf.errors import ConfigError, ContractError, DataError
from egmf.model import EgmfModel
from egmf.prompts import EOS_ID, Vocabulary, build_task_prompt
from egmf.rng import RngState
from egmf.tensor import Parameter, Tensor, constant
from egmf.toy_lm import ToyLM, ToyLMConfig, PseudoProjector, wrap_input
from egmf.training import (
    Adam,
    ablation_csv,
    check_ablation_arms,
    cross_entropy_positions,
    evaluate_model,
    loss_classification,
    loss_regression,
    make_prompt,
    pretrain_lm,
    run_ablation,
    sample_loss,
    sequence_ce,
    train_arm,
    train_model,
)

SMALL_LM = ToyLMConfig(vocab_size=64, d_emb=16, n_layers=1, n_heads=2,
                       max_seq_len=48, n_tokens=2)


def small_vocab():
    return Vocabulary.build(64, words=[f"w{i}" for i in range(8)])


# ---------------------------------------------------------------------------
# losses


def test_uniform_logits_loss_is_log_vocab():
    logits = constant(np.zeros((3, 512)))
    loss = cross_entropy_positions(logits, [0, 2], [5, 17])
    assert abs(loss.item() - math.log(512)) < 1e-12


def test_cross_entropy_hand_trace():
    row = np.array([1.0, 2.0, 0.5, -1.0])
    logits = constant(row.reshape(1, 4))
    loss = cross_entropy_positions(logits, [0], [1])
    expected = -(row[1] - math.log(np.sum(np.exp(row))))
    assert abs(loss.item() - expected) < 1e-12


def test_cross_entropy_contracts():
    logits = constant(np.zeros((2, 8)))
    with pytest.raises(ContractError):
        cross_entropy_positions(logits, [], [])
    with pytest.raises(ContractError):
        cross_entropy_positions(logits, [0, 1], [0])
    with pytest.raises(ContractError):
        cross_entropy_positions(logits, [5], [0])
    with pytest.raises(ContractError):
        cross_entropy_positions(logits, [0], [9])


def test_sequence_ce_needs_two_tokens():
    lm = ToyLM(SMALL_LM, RngState(0))
    with pytest.raises(ContractError):
        sequence_ce(lm, [3])
    assert sequence_ce(lm, [1, 2, 3]).item() > 0


def test_regression_loss_rejects_out_of_range_gold():
    vocab = small_vocab()
    prompt = build_task_prompt(vocab, "regression", score_range=(-1.0, 1.0))
    lm = ToyLM(SMALL_LM, RngState(1))
    lm.finalize_names()
    pseudo = constant(np.zeros((2, 16)))
    wrapped = wrap_input(pseudo, prompt, lm.embedder(), SMALL_LM.max_seq_len)
    with pytest.raises(DataError, match="outside range"):
        loss_regression(lm, None, wrapped, 1.5, vocab, prompt)
    loss = loss_regression(lm, None, wrapped, -0.3, vocab, prompt)
    assert np.isfinite(loss.item())


def test_classification_loss_gradient_reaches_pseudo():
    vocab = small_vocab()
    prompt = build_task_prompt(vocab, "classification", n_labels=3)
    lm = ToyLM(SMALL_LM, RngState(2))
    lm.finalize_names()
    proj = PseudoProjector(8, 16, SMALL_LM.n_tokens, RngState(3))
    proj.finalize_names()
    f = Tensor(np.linspace(-1, 1, 8), requires_grad=True)
    pseudo = proj(f)
    wrapped = wrap_input(pseudo, prompt, lm.embedder(), SMALL_LM.max_seq_len)
    loss = loss_classification(lm, None, wrapped, prompt.label_token_map[1])
    loss.backward()
    assert f.grad is not None and np.any(f.grad != 0.0)


# ---------------------------------------------------------------------------
# Adam


def _param(values):
    return Parameter(Tensor(np.asarray(values, dtype=np.float64), requires_grad=True))


def test_adam_two_step_hand_trace():
    p = _param([1.0])
    opt = Adam([p], lr=0.1)
    g = 0.5
    m = v = 0.0
    x = 1.0
    for t in (1, 2):
        p.tensor.grad = np.array([g])
        opt.step()
        m = 0.9 * m + (1.0 - 0.9) * g
        v = 0.999 * v + (1.0 - 0.999) * (g * g)
        bc1 = 1.0 - 0.9 ** t
        bc2 = 1.0 - 0.999 ** t
        x = x - 0.1 * (m / bc1) / (math.sqrt(v / bc2) + 1e-8)
        assert p.values[0] == x, t


def test_adam_skips_frozen_and_gradless():
    p, q, r = _param([1.0]), _param([2.0]), _param([3.0])
    q.freeze()
    opt = Adam([p, q, r], lr=0.5)
    p.tensor.grad = np.array([1.0])
    q.tensor.grad = None
    r.tensor.grad = None
    opt.step()
    assert p.values[0] != 1.0
    assert q.values[0] == 2.0
    assert r.values[0] == 3.0


def test_adam_zero_grad_is_noop_update():
    p = _param([1.5])
    opt = Adam([p], lr=0.5)
    p.tensor.grad = np.zeros(1)
    opt.step()
    assert p.values[0] == 1.5


def test_adam_zero_grad_resets():
    p = _param([1.0])
    opt = Adam([p], lr=0.1)
    p.tensor.grad = np.array([2.0])
    opt.zero_grad()
    assert p.grad is None


# ---------------------------------------------------------------------------
# loops (micro settings)


@pytest.fixture(scope="module")
def micro():
    spec = SyntheticSpec(task="classification", n_train=8, n_valid=4, n_test=4,
                         n_classes=3, seed=21, n_pretrain=24,
                         s_t=1.0, s_a=0.3, s_v=0.3)
    vocab = build_dataset_vocabulary(spec)
    train = generate_samples(spec, "train")
    test = generate_samples(spec, "test")
    corpus = generate_pretrain_corpus(spec, vocab)
    cfg = desk_config()
    cfg.train.pretrain_steps = 20
    cfg.train.max_epochs = 50
    cfg.train.max_steps = 3
    cfg.train.batch_size = 4
    prompt = build_task_prompt(vocab, "classification", n_labels=3)
    lm = ToyLM(cfg.lm, RngState(cfg.train.seed).derive("lm-init"))
    lm.finalize_names()
    pretrain_lm(lm, corpus, cfg.train, RngState(cfg.train.seed).derive("pretrain"))
    return cfg, vocab, prompt, train, test, lm.state_arrays()


def test_pretrain_reduces_loss(micro):
    cfg, vocab, prompt, train, test, lm_state = micro
    spec = SyntheticSpec(n_train=2, n_classes=3, seed=22, n_pretrain=24)
    corpus = generate_pretrain_corpus(spec, build_dataset_vocabulary(spec))
    lm = ToyLM(cfg.lm, RngState(5))
    lm.finalize_names()
    losses = pretrain_lm(lm, corpus, cfg.train, RngState(6))
    assert len(losses) == cfg.train.pretrain_steps
    assert losses[-1] < losses[0]
    with pytest.raises(DataError, match="empty"):
        pretrain_lm(lm, [], cfg.train, RngState(7))


def test_train_model_runs_and_caps_steps(micro):
    cfg, vocab, prompt, train, test, lm_state = micro
    model, history = train_arm(cfg, train, prompt, vocab, lm_state)
    assert history.steps == cfg.train.max_steps
    assert all(np.isfinite(l) for l in history.step_losses)
    assert all(p.frozen for p in model.lm.parameters())
    report = evaluate_model(model, test, prompt)
    assert report.n_samples == 4
    assert report.task == "classification"
    assert 0.0 <= report.accuracy <= 1.0


def test_train_model_contracts(micro):
    cfg, vocab, prompt, train, test, lm_state = micro
    model = EgmfModel(cfg, RngState(0))
    with pytest.raises(DataError, match="empty training set"):
        train_model(model, [], prompt, vocab, cfg.train)
    frozen = EgmfModel(cfg, RngState(0))
    frozen.freeze()
    with pytest.raises(ConfigError, match="every parameter is frozen"):
        train_model(frozen, train, prompt, vocab, cfg.train)
    with pytest.raises(DataError, match="empty evaluation set"):
        evaluate_model(model, [], prompt)


def test_training_is_deterministic(micro):
    cfg, vocab, prompt, train, test, lm_state = micro
    m1, h1 = train_arm(cfg, train, prompt, vocab, lm_state)
    m2, h2 = train_arm(cfg, train, prompt, vocab, lm_state)
    assert h1.step_losses == h2.step_losses
    for (_, p), (_, q) in zip(m1.named_parameters(), m2.named_parameters()):
        assert np.array_equal(p.values, q.values)


def test_sample_loss_decreases_on_repeat(micro):
    cfg, vocab, prompt, train, test, lm_state = micro
    model, _ = train_arm(cfg, train, prompt, vocab, lm_state)
    before = sample_loss(model, train[0], prompt, vocab).item()
    opt = Adam(model.trainable_parameters(), lr=1e-2)
    for _ in range(10):
        opt.zero_grad()
        sample_loss(model, train[0], prompt, vocab).backward()
        opt.step()
    after = sample_loss(model, train[0], prompt, vocab).item()
    assert after < before


# ---------------------------------------------------------------------------
# ablation harness


def test_run_ablation_full_arm_and_deltas(micro):
    cfg, vocab, prompt, train, test, lm_state = micro
    results = run_ablation(cfg, train, test, vocab, lm_state, prompt,
                           arms=["drop_audio", "no_lora"])
    assert [r.arm for r in results] == ["full", "drop_audio", "no_lora"]
    assert results[0].delta == {}
    for res in results[1:]:
        assert res.delta["accuracy"] == pytest.approx(
            res.report.accuracy - results[0].report.accuracy, abs=1e-15
        )


def test_empty_arm_list_equals_plain_training(micro):
    cfg, vocab, prompt, train, test, lm_state = micro
    results = run_ablation(cfg, train, test, vocab, lm_state, prompt, arms=[])
    assert len(results) == 1
    model, _ = train_arm(cfg, train, prompt, vocab, lm_state)
    direct = evaluate_model(model, test, prompt)
    assert results[0].report.to_dict() == direct.to_dict()


def test_all_modality_drop_rejected(micro):
    cfg, vocab, prompt, train, test, lm_state = micro
    with pytest.raises(ConfigError, match="all three modalities"):
        run_ablation(cfg, train, test, vocab, lm_state, prompt,
                     arms=["drop_audio", "drop_visual", "drop_text"])
    with pytest.raises(ConfigError, match="at least one must remain"):
        check_ablation_arms(("drop_audio", "drop_visual", "drop_text", "no_lora"))
    check_ablation_arms(("drop_audio", "drop_visual"))


def test_ablation_csv_format(micro):
    cfg, vocab, prompt, train, test, lm_state = micro
    results = run_ablation(cfg, train, test, vocab, lm_state, prompt, arms=["no_lora"])
    csv = ablation_csv(results)
    lines = csv.strip().splitlines()
    assert lines[0] == "arm,metric,value,delta"
    assert all(len(line.split(",")) == 4 for line in lines[1:])
    arms = {line.split(",")[0] for line in lines[1:]}
    assert arms == {"full", "no_lora"}
    metrics = {line.split(",")[1] for line in lines[1:]}
    assert "accuracy" in metrics and "weighted_f1" in metrics


def test_make_prompt_defaults(micro):
    cfg, vocab, prompt, train, test, lm_state = micro
    p = make_prompt(cfg, vocab)
    assert p.task == "classification" and len(p.label_token_map) == 7
    cfg2 = desk_config()
    cfg2.train.task = "regression"
    p2 = make_prompt(cfg2, vocab)
    assert p2.task == "regression" and p2.score_range == (-1.0, 1.0)
