"""Adam training loop with early stopping and per-epoch history.

Batches are shuffled under a fixed seed and gradients accumulate one
sentence at a time (each sentence owns its graph), scaled so the update uses
the batch-mean gradient. Validation loss drives early stopping; exact match
and micro-F1 are logged alongside.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import AnnotatedSentence, build_adjacency, label_sequence
from .encoding import Encoded, Vocabulary, build_vocab, encode
from .evaluation import EvalReport, Prediction, token_prf
from .model import Model, ModelConfig, model_loss

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "val_exact_match", "val_f1", "seconds")


class OptimizerError(RuntimeError):
    """Non-finite gradient or other unrecoverable optimizer state."""


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    grad_clip: float | None = None
    record_timing: bool = True
    min_count: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size <= 0 or self.max_epochs <= 0 or self.patience <= 0:
            raise ValueError("lr, batch_size, max_epochs, and patience must be positive")
        if self.patience >= self.max_epochs:
            raise ValueError(
                f"patience {self.patience} must be below max_epochs {self.max_epochs}"
            )
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive when set")

    def to_dict(self) -> dict:
        out = {k: v for k, v in vars(self).items() if k != "model"}
        out["model"] = self.model.to_dict()
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        model = obj.pop("model", {})
        return cls(model=ModelConfig.from_dict(model), **obj)


def load_train_config(path) -> TrainConfig:
    """Read a JSON or flat TOML config file mirroring TrainConfig fields."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if str(path).endswith(".json"):
        return TrainConfig.from_dict(json.loads(text))
    return TrainConfig.from_dict(_parse_flat_toml(text))


def _parse_flat_toml(text: str) -> dict:
    """Tiny TOML subset: [section] headers one level deep, scalar values."""
    out: dict = {}
    section = out
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            section = out.setdefault(name, {})
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        section[key.strip()] = _toml_scalar(value.strip(), lineno)
    return out


def _toml_scalar(text: str, lineno: int):
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        return text[1:-1]
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"config line {lineno}: cannot parse value {text!r}") from None


class Adam:
    """Standard bias-corrected Adam over a named parameter mapping."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 grad_clip: float | None = None):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.grad_clip = grad_clip
        self.step_count = 0
        self.m = {n: np.zeros_like(p.values) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.values) for n, p in params.items()}

    def zero_grad(self) -> None:
        ad.zero_grad(self.params.values())

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None or not np.isfinite(p.grad).all():
                raise OptimizerError(f"non-finite gradient in parameter {name!r}")
        if self.grad_clip is not None:
            total = np.sqrt(sum(float((p.grad**2).sum()) for p in self.params.values()))
            if total > self.grad_clip:
                factor = self.grad_clip / total
                for p in self.params.values():
                    p.grad *= factor
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.values -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class Example:
    """Cached per-sentence model inputs."""

    encoded: Encoded
    adjacency: np.ndarray
    labels: np.ndarray


def build_examples(sentences: Sequence[AnnotatedSentence], vocab: Vocabulary,
                   mcfg: ModelConfig) -> list[Example]:
    out = []
    for s in sentences:
        out.append(
            Example(
                encoded=encode(s, vocab),
                adjacency=build_adjacency(s, vocab.max_len,
                                          directed=mcfg.dep_directed,
                                          self_loops=mcfg.dep_self_loops),
                labels=label_sequence(s, vocab.max_len),
            )
        )
    return out


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_exact_match: float
    val_f1: float
    seconds: float

    def row(self) -> list[str]:
        return [
            str(self.epoch),
            f"{self.train_loss:.12g}",
            f"{self.val_loss:.12g}",
            f"{self.val_exact_match:.12g}",
            f"{self.val_f1:.12g}",
            f"{self.seconds:.12g}",
        ]


def write_history(path, history: Sequence[EpochStats]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for stats in history:
            writer.writerow(stats.row())


def read_history(path) -> list[EpochStats]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                EpochStats(
                    epoch=int(row["epoch"]),
                    train_loss=float(row["train_loss"]),
                    val_loss=float(row["val_loss"]),
                    val_exact_match=float(row["val_exact_match"]),
                    val_f1=float(row["val_f1"]),
                    seconds=float(row["seconds"]),
                )
            )
    return out


@dataclass
class TrainResult:
    model: Model
    vocab: Vocabulary
    history: list[EpochStats]
    best_epoch: int
    best_loss: float
    stopped_early: bool


def _validation_pass(model: Model, examples: list[Example],
                     sentences: Sequence[AnnotatedSentence]) -> tuple[float, EvalReport]:
    """One forward per sentence yields both the loss and the metric report."""
    losses = []
    preds = []
    for ex, s in zip(examples, sentences):
        result = model.forward(ex.encoded, ex.adjacency)
        losses.append(
            model_loss(result.logits, ex.labels, model.cfg.include_pads_in_loss,
                       ex.encoded.pad_mask).item()
        )
        n = len(s)
        classes = np.argmax(result.logits.values[1 : n + 1], axis=1) + 1
        preds.append(Prediction.from_classes(s.sent_id, classes))
    report = token_prf(preds, sentences)
    return float(np.mean(losses)), report


def train(
    cfg: TrainConfig,
    train_sentences: Sequence[AnnotatedSentence],
    val_sentences: Sequence[AnnotatedSentence] = (),
    vocab: Vocabulary | None = None,
    progress: Callable[[EpochStats], None] | None = None,
) -> TrainResult:
    """Fit a fresh model; returns it restored to the best-validation epoch."""
    if not train_sentences:
        raise ValueError("training set is empty")
    if vocab is None:
        vocab = build_vocab(train_sentences, min_count=cfg.min_count)
    model = Model(cfg.model, vocab, seed=cfg.seed)
    params = model.named_parameters()
    optimizer = Adam(params, cfg.lr, grad_clip=cfg.grad_clip)
    train_examples = build_examples(train_sentences, vocab, cfg.model)
    val_examples = build_examples(val_sentences, vocab, cfg.model)
    if not val_sentences:
        log.warning("validation set is empty; early stopping watches train loss")

    rng = np.random.default_rng(cfg.seed)
    dropout_rng = np.random.default_rng(cfg.seed + 1) if cfg.model.dropout > 0 else None
    history: list[EpochStats] = []
    best_loss = np.inf
    best_epoch = 0
    best_values: dict[str, np.ndarray] = {}
    stale = 0
    stopped_early = False

    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(train_examples))
        epoch_losses = []
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            optimizer.zero_grad()
            inv = 1.0 / len(batch)
            for idx in batch:
                ex = train_examples[idx]
                loss, _ = model.loss(ex.encoded, ex.adjacency, ex.labels, dropout_rng)
                epoch_losses.append(loss.item())
                ad.backward(ad.affine(loss, scale_by=inv))
            optimizer.step()
        train_loss = float(np.mean(epoch_losses))

        if val_examples:
            val_loss, report = _validation_pass(model, val_examples, val_sentences)
            val_exact, val_f1 = report.exact_match, report.micro.f1
            watched = val_loss
        else:
            val_loss, val_exact, val_f1 = float("nan"), float("nan"), float("nan")
            watched = train_loss

        seconds = time.perf_counter() - started if cfg.record_timing else 0.0
        stats = EpochStats(epoch, train_loss, val_loss, val_exact, val_f1, seconds)
        history.append(stats)
        log.info(
            "epoch %d: train %.4f val %.4f exact %.3f f1 %.3f (%.1fs)",
            epoch, train_loss, val_loss, val_exact, val_f1, seconds,
        )
        if progress is not None:
            progress(stats)

        if watched < best_loss:
            best_loss = watched
            best_epoch = epoch
            best_values = {n: p.values.copy() for n, p in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                stopped_early = True
                break

    for name, values in best_values.items():
        params[name].values = values
    return TrainResult(
        model=model,
        vocab=vocab,
        history=history,
        best_epoch=best_epoch,
        best_loss=float(best_loss),
        stopped_early=stopped_early,
    )
