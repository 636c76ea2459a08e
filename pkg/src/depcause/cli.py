"""Command-line interface wiring generation, training, evaluation,
prediction, gradient checking, and attention inspection together.

Exit codes: 0 success, 1 verification failure (gradcheck, validate),
2 usage or environment error. Logs go to stderr; data goes to stdout or
the requested output files.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .autodiff import finite_diff_check
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .corpus import (
    CorpusError,
    build_adjacency,
    label_sequence,
    parse_conllu,
    read_jsonl,
    split_dataset,
    write_jsonl,
)
from .encoding import TruncationError, build_vocab, encode
from .evaluation import per_sentence_records, predict, predict_corpus, token_prf
from .generator import (
    corpus_manifest,
    generate,
    instantiate,
    load_lexicon,
    load_templates,
    validate_corpus,
    DEFAULT_TEMPLATES,
)
from .model import Model, ModelConfig
from .training import OptimizerError, TrainConfig, load_train_config, train, write_history

log = logging.getLogger("depcause.cli")


def _default_seed() -> int:
    return int(os.environ.get("DEPCAUSE_SEED", "0"))


def _read_corpus(path, require_spans: bool = True, validate: bool = True):
    p = Path(path)
    if not p.exists():
        raise CorpusError(f"no such file: {p}")
    if p.suffix == ".conllu":
        return parse_conllu(p.read_text(encoding="utf-8"))
    return read_jsonl(p, require_spans=require_spans, validate=validate)


def _parse_split(text: str) -> tuple[float, float, float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"split must look like 6:3:1, got {text!r}")
    weights = [float(p) for p in parts]
    if any(w < 0 for w in weights) or sum(weights) <= 0:
        raise ValueError(f"split weights must be nonnegative and not all zero: {text!r}")
    total = sum(weights)
    return tuple(w / total for w in weights)


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_gen_data(args) -> int:
    templates = load_templates(args.templates) if args.templates else None
    lexicon = load_lexicon(args.lexicon) if args.lexicon else None
    ratios = _parse_split(args.split)
    corpus = generate(args.n, seed=args.seed, templates=templates, lexicon=lexicon)
    train_part, test_part, val_part = split_dataset(corpus, ratios, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "train.jsonl", train_part)
    write_jsonl(out / "test.jsonl", test_part)
    write_jsonl(out / "val.jsonl", val_part)
    manifest = corpus_manifest(corpus, seed=args.seed, templates=templates, lexicon=lexicon)
    manifest["split"] = {
        "ratios": list(ratios),
        "train": len(train_part),
        "test": len(test_part),
        "val": len(val_part),
    }
    _write_json(out / "manifest.json", manifest)
    log.info("wrote %d/%d/%d sentences under %s",
             len(train_part), len(test_part), len(val_part), out)
    return 0


_ABLATION_GATE = {"full": "learned", "left-only": "left_only", "right-only": "right_only"}


def cmd_train(args) -> int:
    cfg = load_train_config(args.config) if args.config else TrainConfig()
    overrides = {}
    for name in ("lr", "batch_size", "max_epochs", "patience", "seed", "grad_clip"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.no_timing:
        overrides["record_timing"] = False
    model_cfg = cfg.model
    if args.ablation != "full":
        model_cfg = dataclasses.replace(model_cfg, gate_mode=_ABLATION_GATE[args.ablation])
    cfg = dataclasses.replace(cfg, model=model_cfg, **overrides)

    train_sents = _read_corpus(args.train)
    val_sents = _read_corpus(args.val) if args.val else []
    result = train(
        cfg, train_sents, val_sents,
        progress=lambda h: log.info(
            "epoch %d  train %.4f  val %.4f  exact %.3f  f1 %.3f",
            h.epoch, h.train_loss, h.val_loss, h.val_exact_match, h.val_f1),
    )

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint", result.model, train_config=cfg.to_dict(),
                    extra={"best_epoch": result.best_epoch,
                           "best_loss": result.best_loss,
                           "stopped_early": result.stopped_early})
    write_history(out / "history.csv", result.history)
    from .plots import plot_history  # matplotlib import deferred to first use

    plot_history(result.history, out / "history.png")
    _write_json(out / "config.json", cfg.to_dict())

    final = result.history[-1]
    print(f"epochs run        {len(result.history)}")
    print(f"best epoch        {result.best_epoch}")
    print(f"final train loss  {final.train_loss:.6f}")
    if val_sents:
        report = token_prf(predict_corpus(result.model, val_sents), val_sents)
        print(report.format_text())
    return 0


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    sentences = _read_corpus(args.data)
    preds = predict_corpus(model, sentences)
    report = token_prf(preds, sentences)
    print(report.to_json() if args.json else report.format_text())
    if args.per_sentence:
        with open(args.per_sentence, "w", encoding="utf-8") as fh:
            for record in per_sentence_records(preds, sentences):
                fh.write(json.dumps(record) + "\n")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "report.json", report.to_dict())
        (out / "report.txt").write_text(report.format_text() + "\n", encoding="utf-8")
        from .plots import plot_report

        plot_report(report, out / "report.png")
    return 0


def cmd_predict(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    sentences = _read_corpus(args.data, require_spans=False)
    lines = []
    for s in sentences:
        p = predict(model, s)
        lines.append(json.dumps({
            "id": s.sent_id,
            "tokens": list(s.tokens),
            "cause_tokens": sorted(p.cause_tokens),
            "effect_tokens": sorted(p.effect_tokens),
        }))
    text = "\n".join(lines) + "\n" if lines else ""
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _gradcheck_fixture():
    lead_to = next(t for t in DEFAULT_TEMPLATES if t.name == "lead_to")
    return instantiate(lead_to, (("diabetes", "NOUN"),), (("blindness", "NOUN"),), "fixture")


def cmd_gradcheck(args) -> int:
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            model_cfg = ModelConfig.from_dict(json.load(fh))
    else:
        model_cfg = ModelConfig(width=16, left_layers=1, right_layers=1,
                                left_heads=2, ffn_mult=2)
    sentence = _gradcheck_fixture()
    vocab = build_vocab([sentence])
    model = Model(model_cfg, vocab, seed=args.seed)
    encoded = encode(sentence, vocab)
    adj = build_adjacency(sentence, vocab.max_len,
                          directed=model_cfg.dep_directed,
                          self_loops=model_cfg.dep_self_loops)
    labels = label_sequence(sentence, vocab.max_len)

    def rebuild():
        loss, _ = model.loss(encoded, adj, labels)
        return loss

    report = finite_diff_check(rebuild, model.named_parameters(),
                               tolerance=args.tolerance)
    print(report.format_table())
    verdict = "PASS" if report.passed else "FAIL"
    print(f"{verdict} max relative error {report.max_rel_err:.3e} "
          f"(tolerance {args.tolerance:g})")
    return 0 if report.passed else 1


def cmd_inspect_attention(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    sentences = _read_corpus(args.data, require_spans=False)
    matches = [s for s in sentences if s.sent_id == args.sentence_id]
    if not matches:
        raise CorpusError(f"no sentence with id {args.sentence_id!r} in {args.data}")
    sentence = matches[0]
    encoded = encode(sentence, model.vocab)
    adj = build_adjacency(sentence, model.vocab.max_len,
                          directed=model.cfg.dep_directed,
                          self_loops=model.cfg.dep_self_loops)
    result = model.forward(encoded, adj)
    layers = result.attention
    if not -len(layers) <= args.layer < len(layers):
        raise ValueError(f"layer {args.layer} out of range; model has {len(layers)}")
    index = args.layer % len(layers)
    payload = {
        "sentence_id": sentence.sent_id,
        "tokens": list(sentence.tokens),
        "layer": index,
        "alphas": [alpha.values.tolist() for alpha in layers[index]],
        "adjacency": adj.astype(bool).tolist(),
    }
    if args.out:
        _write_json(args.out, payload)
    else:
        print(json.dumps(payload, indent=2))
    return 0


def cmd_validate(args) -> int:
    sentences = _read_corpus(args.data, require_spans=False, validate=False)
    report = validate_corpus(sentences)
    print(report.format_text())
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depcause",
        description="Dependency-aware cause/effect phrase tagger.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a templated corpus and split it")
    p.add_argument("--n", type=int, required=True, help="number of sentences")
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--templates", help="template JSON file (default: built-ins)")
    p.add_argument("--lexicon", help="lexicon JSON file (default: built-ins)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--split", default="6:3:1", help="train:test:val weights")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", help="JSON or flat-TOML training config")
    p.add_argument("--train", required=True, help="training corpus (.jsonl or .conllu)")
    p.add_argument("--val", help="validation corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--grad-clip", dest="grad_clip", type=float)
    p.add_argument("--no-timing", action="store_true",
                   help="record 0.0 seconds per epoch for reproducible history files")
    p.add_argument("--ablation", choices=sorted(_ABLATION_GATE), default="full",
                   help="train the full model or a single tower")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint against a labeled corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    p.add_argument("--per-sentence", dest="per_sentence",
                   help="write one JSONL record per sentence here")
    p.add_argument("--out", help="directory for report.json, report.txt, report.png")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="emit predicted spans for a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True,
                   help="annotated sentences; gold spans optional")
    p.add_argument("--out", help="output JSONL (default: stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck",
                       help="compare gradients against finite differences")
    p.add_argument("--config", help="model config JSON (default: small fixture)")
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect-attention",
                       help="dump one layer's dependency-attention weights as JSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sentence-id", dest="sentence_id", required=True)
    p.add_argument("--layer", type=int, default=-1)
    p.add_argument("--out", help="output JSON path (default: stdout)")
    p.set_defaults(func=cmd_inspect_attention)

    p = sub.add_parser("validate", help="run corpus sanity checks")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CorpusError, CheckpointError, OptimizerError, TruncationError,
            ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
