"""Command-line entry points.

Subcommands cover the whole workflow::

    egmf generate-data --spec spec.json --out data/
    egmf pretrain-lm   --config c.json --data data/manifest.json --out run/
    egmf train         --config c.json --data data/manifest.json --lm run/lm.ckpt --out run/
    egmf eval          --config c.json --checkpoint run/model.ckpt --data data/manifest.json
    egmf ablate        --config c.json --data data/manifest.json --lm run/lm.ckpt --out run/
    egmf inspect       --config c.json --checkpoint run/model.ckpt --data data/manifest.json

Exit codes: 0 success, 1 usage error, 2 data/config/checkpoint error.
`--seed` overrides the config seed everywhere it matters.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from egmf.checkpoint import load_module_checkpoint, save_module_checkpoint
from egmf.config import EgmfConfig, config_hash, lm_config_hash, load_config
from egmf.data import (
    load_dataset,
    load_manifest,
    load_pretrain_corpus,
    load_spec,
    load_vocabulary,
    generate_synthetic,
)
from egmf.errors import (
    CheckpointError,
    ConfigError,
    DataError,
    SequenceLengthError,
    VocabularyError,
)
from egmf.model import AblationFlags, EgmfModel
from egmf.rng import RngState
from egmf.toy_lm import ToyLM, predict_label, predict_score
from egmf.training import (
    ablation_csv,
    check_ablation_arms,
    evaluate_model,
    make_prompt,
    pretrain_lm,
    run_ablation,
    train_arm,
)

_INPUT_ERRORS = (DataError, ConfigError, CheckpointError, VocabularyError, SequenceLengthError)


class _Parser(argparse.ArgumentParser):
    """argparse maps usage errors to exit 2 by default; we reserve 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def build_parser() -> _Parser:
    parser = _Parser(prog="egmf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def cmd(name, help_text, *, config=True, data=False, out=False):
        p = sub.add_parser(name, help=help_text)
        if config:
            p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if data:
            p.add_argument("--data", required=True, help="dataset manifest.json")
        if out:
            p.add_argument("--out", required=True, help="output directory")
        else:
            p.add_argument("--out", default=None, help="output directory")
        return p

    p = cmd("generate-data", "write a synthetic dataset", config=False, out=True)
    p.add_argument("--spec", required=True, help="JSON synthetic dataset spec")

    cmd("pretrain-lm", "pretrain the toy LM on the format corpus", data=True, out=True)

    p = cmd("train", "train the fusion model against a frozen LM", data=True, out=True)
    p.add_argument("--lm", default=None, help="pretrained LM checkpoint (else pretrain in-process)")
    p.add_argument("--split", default="valid", help="split evaluated after training")

    p = cmd("eval", "evaluate a trained checkpoint", data=True)
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--split", default="test", help="split to evaluate")

    p = cmd("ablate", "train and score every configured ablation arm", data=True, out=True)
    p.add_argument("--lm", default=None, help="pretrained LM checkpoint (else pretrain in-process)")
    p.add_argument("--split", default="test", help="split scored per arm")

    p = cmd("inspect", "dump gate and attention diagnostics for one utterance", data=True)
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--split", default="test", help="split to read the utterance from")
    p.add_argument("--index", type=int, default=0, help="utterance index within the split")
    return parser


def _load_config(args) -> EgmfConfig:
    config = load_config(args.config)
    if args.seed is not None:
        config.train = dataclasses.replace(config.train, seed=args.seed)
    return config


def _write_json(out_dir, name, payload) -> str:
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _pretrained_state(config, manifest_path, lm_path):
    """LM weights for training: load a checkpoint or pretrain in-process."""
    lm = ToyLM(config.lm, RngState(config.train.seed).derive("lm-init"))
    lm.finalize_names()
    if lm_path is not None:
        load_module_checkpoint(lm_path, lm, lm_config_hash(config))
    else:
        corpus = load_pretrain_corpus(manifest_path)
        pretrain_lm(lm, corpus, config.train, RngState(config.train.seed).derive("pretrain"))
    return lm.state_arrays()


def _load_model(config, checkpoint_path) -> EgmfModel:
    model = EgmfModel(config, RngState(config.train.seed))
    load_module_checkpoint(checkpoint_path, model, config_hash(config))
    return model


def _prompt_and_samples(config, args):
    manifest = load_manifest(args.data)
    vocab = load_vocabulary(args.data, manifest)
    prompt = make_prompt(config, vocab, manifest)
    samples = load_dataset(args.data, args.split) if hasattr(args, "split") else None
    return manifest, vocab, prompt, samples


def _run_generate_data(args) -> int:
    spec = load_spec(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    os.makedirs(args.out, exist_ok=True)
    generate_synthetic(spec, args.out)
    print(os.path.join(args.out, "manifest.json"))
    return 0


def _run_pretrain_lm(args) -> int:
    config = _load_config(args)
    corpus = load_pretrain_corpus(args.data)
    lm = ToyLM(config.lm, RngState(config.train.seed).derive("lm-init"))
    lm.finalize_names()
    losses = pretrain_lm(lm, corpus, config.train, RngState(config.train.seed).derive("pretrain"))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "lm.ckpt")
    save_module_checkpoint(path, lm, lm_config_hash(config), config.train.seed)
    print(f"{path}  loss {losses[0]:.4f} -> {losses[-1]:.4f} over {len(losses)} steps")
    return 0


def _run_train(args) -> int:
    config = _load_config(args)
    manifest, vocab, prompt, eval_samples = _prompt_and_samples(config, args)
    train_samples = load_dataset(args.data, "train")
    flags = AblationFlags.from_names(config.train.ablation)
    lm_state = _pretrained_state(config, args.data, args.lm)
    model, history = train_arm(config, train_samples, prompt, vocab, lm_state, flags)
    report = evaluate_model(model, eval_samples, prompt, flags)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "model.ckpt")
    save_module_checkpoint(ckpt, model, config_hash(config), config.train.seed)
    _write_json(args.out, f"metrics_{args.split}.json", report.to_dict())
    _write_json(args.out, "history.json", {"step_losses": history.step_losses})
    print(ckpt)
    print(report.to_table())
    return 0


def _run_eval(args) -> int:
    config = _load_config(args)
    manifest, vocab, prompt, samples = _prompt_and_samples(config, args)
    flags = AblationFlags.from_names(config.train.ablation)
    model = _load_model(config, args.checkpoint)
    report = evaluate_model(model, samples, prompt, flags)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(args.out, f"metrics_{args.split}.json", report.to_dict())
    print(report.to_table())
    return 0


def _run_ablate(args) -> int:
    config = _load_config(args)
    check_ablation_arms(config.train.ablation)
    manifest, vocab, prompt, eval_samples = _prompt_and_samples(config, args)
    train_samples = load_dataset(args.data, "train")
    lm_state = _pretrained_state(config, args.data, args.lm)
    results = run_ablation(config, train_samples, eval_samples, vocab, lm_state, prompt)
    os.makedirs(args.out, exist_ok=True)
    csv_text = ablation_csv(results)
    with open(os.path.join(args.out, "ablation.csv"), "w", encoding="utf-8") as fh:
        fh.write(csv_text)
    _write_json(
        args.out,
        "ablation.json",
        {r.arm: {"metrics": r.report.to_dict(), "delta": r.delta} for r in results},
    )
    for r in results:
        key = "accuracy" if r.report.task == "classification" else "mae"
        val = r.report.to_dict()[key]
        print(f"{r.arm:15s} {key} {val:.4f}  delta {r.delta.get(key, 0.0):+.4f}")
    return 0


def _run_inspect(args) -> int:
    config = _load_config(args)
    manifest, vocab, prompt, samples = _prompt_and_samples(config, args)
    if not 0 <= args.index < len(samples):
        raise DataError(f"index {args.index} outside split of {len(samples)} samples")
    sample = samples[args.index]
    flags = AblationFlags.from_names(config.train.ablation)
    model = _load_model(config, args.checkpoint)
    out = model.forward(sample, prompt, flags)
    gate = out.enhanced_rep.gate
    if prompt.task == "classification":
        prediction = predict_label(model.lm, out.wrapped, model.adapters, prompt.label_token_ids)
    else:
        prediction = predict_score(model.lm, out.wrapped, model.adapters, prompt.score_range).value
    payload = {
        "split": args.split,
        "index": args.index,
        "target": sample.target,
        "prediction": prediction,
        "gate": {"w": gate.w.tolist(), "alpha": gate.alpha.tolist(), "beta": gate.beta},
        "expert_outputs": [e.tolist() for e in out.enhanced_rep.expert_outputs],
        "cross_attention": [w.tolist() for w in out.fusion_rep.attn_weights_cross],
        "self_attention": [w.tolist() for w in out.fusion_rep.attn_weights_self],
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(args.out, f"inspect_{args.split}_{args.index}.json", payload)
    print(text)
    return 0


_COMMANDS = {
    "generate-data": _run_generate_data,
    "pretrain-lm": _run_pretrain_lm,
    "train": _run_train,
    "eval": _run_eval,
    "ablate": _run_ablate,
    "inspect": _run_inspect,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except _INPUT_ERRORS as exc:
        sys.stderr.write(f"egmf {args.command}: error: {exc}\n")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
