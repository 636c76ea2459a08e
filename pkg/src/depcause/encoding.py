"""Vocabulary, integer encoding, and the summed triple-ID token embedding.

Every position in a padded sequence gets three ids: a surface-form id, a
position id, and a POS-tag id. Their embedding rows are summed into one
vector per position; both towers consume that same matrix.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .autodiff import Tensor, add, gather_rows
from .corpus import NUM_CLASSES, AnnotatedSentence

PAD_ID, START_ID, END_ID, UNK_ID = 0, 1, 2, 3
SPECIAL_TAG_ID = 0

_RESERVED = {"<pad>": PAD_ID, "<s>": START_ID, "</s>": END_ID, "<unk>": UNK_ID}


class TruncationError(ValueError):
    """Sentence does not fit the padded length; nothing is truncated silently."""


@dataclass
class Vocabulary:
    """Token and POS-tag id maps plus the padded sequence length they serve.

    Ids are dense: tokens start after the four reserved slots (pad, start,
    end, unk), tags after the shared special-tag slot 0.
    """

    tokens: dict[str, int]
    tags: dict[str, int]
    max_len: int

    def __post_init__(self):
        for form, idx in _RESERVED.items():
            if self.tokens.get(form) != idx:
                raise ValueError(f"vocabulary is missing reserved token {form!r} at id {idx}")

    @property
    def num_tokens(self) -> int:
        return len(self.tokens)

    @property
    def num_tags(self) -> int:
        return len(self.tags) + 1  # slot 0 is the special tag

    def token_id(self, form: str) -> int:
        return self.tokens.get(form.lower(), UNK_ID)

    def tag_id(self, tag: str) -> int:
        # the UPOS inventory is closed; anything unseen degrades to the
        # special-tag slot rather than failing at prediction time
        return self.tags.get(tag, SPECIAL_TAG_ID)

    def to_json(self) -> str:
        return json.dumps(
            {"tokens": self.tokens, "tags": self.tags, "max_len": self.max_len},
            ensure_ascii=False,
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        obj = json.loads(text)
        return cls(tokens=obj["tokens"], tags=obj["tags"], max_len=int(obj["max_len"]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def build_vocab(
    sentences: Sequence[AnnotatedSentence],
    min_count: int = 1,
    margin: int = 2,
    max_len: int | None = None,
) -> Vocabulary:
    """Build id maps from a training corpus.

    Surface forms are lowercased; forms rarer than ``min_count`` are left out
    and encode as unk. Id order is frequency-descending with lexicographic
    ties, so the same corpus always yields the same mapping. ``max_len``
    defaults to the longest sentence plus specials plus ``margin`` headroom.
    """
    if not sentences:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = Counter(form.lower() for s in sentences for form in s.tokens)
    kept = sorted(
        (form for form, c in counts.items() if c >= min_count),
        key=lambda form: (-counts[form], form),
    )
    tokens = dict(_RESERVED)
    for form in kept:
        tokens[form] = len(tokens)
    tags = {}
    for tag in sorted({t for s in sentences for t in s.pos_tags}):
        tags[tag] = len(tags) + 1
    if max_len is None:
        max_len = max(len(s) for s in sentences) + 2 + margin
    return Vocabulary(tokens=tokens, tags=tags, max_len=max_len)


class Encoded(NamedTuple):
    """Integer views of one sentence at the padded length."""

    ids: np.ndarray
    positions: np.ndarray
    tags: np.ndarray
    pad_mask: np.ndarray  # true on real and start/end positions, false on pads


def encode(sentence: AnnotatedSentence, vocab: Vocabulary, padded_len: int | None = None) -> Encoded:
    """Map a sentence to id arrays with the [START][tokens][END][PAD...] layout."""
    m = vocab.max_len if padded_len is None else padded_len
    n = len(sentence)
    if n + 2 > m:
        raise TruncationError(
            f"{sentence.sent_id}: {n} tokens plus start/end exceed padded length {m}"
        )
    ids = np.full(m, PAD_ID, dtype=np.int64)
    ids[0] = START_ID
    ids[1 : n + 1] = [vocab.token_id(t) for t in sentence.tokens]
    ids[n + 1] = END_ID
    tags = np.full(m, SPECIAL_TAG_ID, dtype=np.int64)
    tags[1 : n + 1] = [vocab.tag_id(t) for t in sentence.pos_tags]
    pad_mask = np.zeros(m, dtype=bool)
    pad_mask[: n + 2] = True
    return Encoded(ids=ids, positions=np.arange(m, dtype=np.int64), tags=tags, pad_mask=pad_mask)


def decode_tokens(ids: np.ndarray, vocab: Vocabulary) -> list[str]:
    """Surface forms for the real-token ids (inverse of encode up to casing/unk)."""
    reverse = {idx: form for form, idx in vocab.tokens.items()}
    out = []
    for idx in ids:
        idx = int(idx)
        if idx in (PAD_ID, START_ID, END_ID):
            continue
        out.append(reverse[idx])
    return out


@dataclass
class EmbeddingTables:
    """Trainable lookup tables: surface id, position, and POS tag, same width."""

    e_id: Tensor
    e_pos: Tensor
    e_tag: Tensor

    def __post_init__(self):
        widths = {self.e_id.shape[1], self.e_pos.shape[1], self.e_tag.shape[1]}
        if len(widths) != 1:
            raise ValueError(f"embedding widths differ: {sorted(widths)}")

    @property
    def width(self) -> int:
        return self.e_id.shape[1]


def init_tables(vocab: Vocabulary, width: int, rng: np.random.Generator,
                init_scale: float = 0.1) -> EmbeddingTables:
    def table(rows: int) -> Tensor:
        return Tensor(rng.normal(0.0, init_scale, size=(rows, width)), requires_grad=True)

    return EmbeddingTables(
        e_id=table(vocab.num_tokens),
        e_pos=table(vocab.max_len),
        e_tag=table(vocab.num_tags),
    )


def embed(encoded: Encoded, tables: EmbeddingTables) -> Tensor:
    """Per-position vector: id row + position row + tag row."""
    return add(
        add(gather_rows(tables.e_id, encoded.ids), gather_rows(tables.e_pos, encoded.positions)),
        gather_rows(tables.e_tag, encoded.tags),
    )


def one_hot_labels(labels: np.ndarray) -> np.ndarray:
    """Class ids in 1..4 to one-hot rows (class c at column c-1)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 1 or labels.max() > NUM_CLASSES:
        raise ValueError(f"label outside 1..{NUM_CLASSES}: {labels}")
    out = np.zeros((labels.size, NUM_CLASSES))
    out[np.arange(labels.size), labels - 1] = 1.0
    return out
