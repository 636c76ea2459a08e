"""Argmax decoding and corpus metrics.

Headline numbers are token-level micro precision/recall/F1 pooled over the
cause and effect classes, plus sentence exact match with no partial credit.
Per-class and macro values ride along so no metric variant is ambiguous.
Start, end, and pad positions never enter the metrics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import CAUSE, EFFECT, AnnotatedSentence, build_adjacency, label_sequence
from .encoding import encode
from .model import Model


@dataclass
class Prediction:
    """Per-real-token argmax classes and the cause/effect sets they imply.

    Ties at the argmax resolve to the lowest class id. ``classes[t]`` is the
    predicted class of token t (1..4; an untrained model may emit 1 for a
    real token, which simply lands in neither derived set).
    """

    sent_id: str
    classes: np.ndarray
    cause_tokens: frozenset[int]
    effect_tokens: frozenset[int]

    @classmethod
    def from_classes(cls, sent_id: str, classes: np.ndarray) -> "Prediction":
        classes = np.asarray(classes, dtype=np.int64)
        return cls(
            sent_id=sent_id,
            classes=classes,
            cause_tokens=frozenset(int(i) for i in np.flatnonzero(classes == CAUSE)),
            effect_tokens=frozenset(int(i) for i in np.flatnonzero(classes == EFFECT)),
        )


def predict(model: Model, sentence: AnnotatedSentence) -> Prediction:
    """Encode, run the model, and argmax each real-token position."""
    vocab = model.vocab
    encoded = encode(sentence, vocab)
    adj = build_adjacency(sentence, vocab.max_len,
                          directed=model.cfg.dep_directed,
                          self_loops=model.cfg.dep_self_loops)
    logits = model.forward(encoded, adj).logits.values
    n = len(sentence)
    # np.argmax takes the first maximum, which is the lowest class id
    classes = np.argmax(logits[1 : n + 1], axis=1) + 1
    return Prediction.from_classes(sentence.sent_id, classes)


def predict_corpus(model: Model, sentences: Sequence[AnnotatedSentence]) -> list[Prediction]:
    return [predict(model, s) for s in sentences]


def gold_sets(sentence: AnnotatedSentence) -> tuple[frozenset[int], frozenset[int]]:
    if sentence.cause is None or sentence.effect is None:
        raise ValueError(f"{sentence.sent_id}: evaluation needs gold cause and effect spans")
    cause = frozenset(range(sentence.cause[0], sentence.cause[1] + 1))
    effect = frozenset(range(sentence.effect[0], sentence.effect[1] + 1))
    return cause, effect


def exact_match(pred: Prediction, gold: AnnotatedSentence) -> bool:
    """Both token sets must match exactly; extra or missing tokens fail."""
    gold_cause, gold_effect = gold_sets(gold)
    return pred.cause_tokens == gold_cause and pred.effect_tokens == gold_effect


@dataclass
class Prf:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> tuple["Prf", bool]:
        """Compute the triple; the flag reports any zero denominator."""
        hit_zero = False

        def ratio(num: int, denom: int) -> float:
            nonlocal hit_zero
            if denom == 0:
                hit_zero = True
                return 0.0
            return num / denom

        p = ratio(tp, tp + fp)
        r = ratio(tp, tp + fn)
        if p + r == 0.0:
            hit_zero = True
            return cls(p, r, 0.0), hit_zero
        return cls(p, r, 2 * p * r / (p + r)), hit_zero


@dataclass
class EvalReport:
    micro: Prf
    cause: Prf
    effect: Prf
    macro: Prf
    exact_match: float
    support_cause: int
    support_effect: int
    sentences: int
    zero_division: bool

    def to_dict(self) -> dict:
        return {
            "micro": vars(self.micro),
            "cause": vars(self.cause),
            "effect": vars(self.effect),
            "macro": vars(self.macro),
            "exact_match": self.exact_match,
            "support": {"cause": self.support_cause, "effect": self.support_effect},
            "sentences": self.sentences,
            "zero_division": self.zero_division,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def format_text(self) -> str:
        rows = [
            ("micro (cause+effect)", self.micro),
            ("cause", self.cause),
            ("effect", self.effect),
            ("macro", self.macro),
        ]
        lines = [
            f"{'':22}{'precision':>10}{'recall':>10}{'f1':>10}",
        ]
        for name, prf in rows:
            lines.append(
                f"{name:<22}{prf.precision:>10.4f}{prf.recall:>10.4f}{prf.f1:>10.4f}"
            )
        lines.append("")
        lines.append(f"exact match           {self.exact_match:>10.4f}")
        lines.append(
            f"support               cause={self.support_cause} effect={self.support_effect} "
            f"sentences={self.sentences}"
        )
        if self.zero_division:
            lines.append("note: a zero denominator was reported as 0.0")
        return "\n".join(lines)


def token_prf(preds: Sequence[Prediction], golds: Sequence[AnnotatedSentence]) -> EvalReport:
    """Pool token decisions over the corpus and count exact sentence matches."""
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions for {len(golds)} gold sentences")
    counts = {CAUSE: [0, 0, 0], EFFECT: [0, 0, 0]}  # tp, fp, fn
    matches = 0
    support = {CAUSE: 0, EFFECT: 0}
    for pred, gold in zip(preds, golds):
        if len(pred.classes) != len(gold):
            raise ValueError(
                f"{gold.sent_id}: prediction covers {len(pred.classes)} tokens, "
                f"sentence has {len(gold)}"
            )
        gold_classes = label_sequence(gold, len(gold) + 2)[1 : len(gold) + 1]
        for cls in (CAUSE, EFFECT):
            p = pred.classes == cls
            g = gold_classes == cls
            counts[cls][0] += int(np.sum(p & g))
            counts[cls][1] += int(np.sum(p & ~g))
            counts[cls][2] += int(np.sum(~p & g))
            support[cls] += int(np.sum(g))
        if exact_match(pred, gold):
            matches += 1
    cause_prf, z1 = Prf.from_counts(*counts[CAUSE])
    effect_prf, z2 = Prf.from_counts(*counts[EFFECT])
    pooled = [counts[CAUSE][i] + counts[EFFECT][i] for i in range(3)]
    micro, z3 = Prf.from_counts(*pooled)
    macro = Prf(
        precision=(cause_prf.precision + effect_prf.precision) / 2,
        recall=(cause_prf.recall + effect_prf.recall) / 2,
        f1=(cause_prf.f1 + effect_prf.f1) / 2,
    )
    return EvalReport(
        micro=micro,
        cause=cause_prf,
        effect=effect_prf,
        macro=macro,
        exact_match=matches / len(golds) if golds else 0.0,
        support_cause=support[CAUSE],
        support_effect=support[EFFECT],
        sentences=len(golds),
        zero_division=z1 or z2 or z3,
    )


def evaluate(model: Model, sentences: Sequence[AnnotatedSentence]) -> EvalReport:
    return token_prf(predict_corpus(model, sentences), sentences)


def per_sentence_records(preds: Sequence[Prediction],
                         golds: Sequence[AnnotatedSentence]) -> list[dict]:
    """One JSONL-ready record per sentence: match flag plus predicted sets."""
    records = []
    for pred, gold in zip(preds, golds):
        records.append(
            {
                "id": gold.sent_id,
                "exact_match": exact_match(pred, gold),
                "predicted_cause": sorted(pred.cause_tokens),
                "predicted_effect": sorted(pred.effect_tokens),
                "gold_cause": sorted(gold_sets(gold)[0]),
                "gold_effect": sorted(gold_sets(gold)[1]),
            }
        )
    return records
