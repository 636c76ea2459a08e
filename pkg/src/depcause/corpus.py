"""Annotated-sentence data model and corpus ingestion.

A sentence carries word-level tokens aligned 1:1 with dependency-tree nodes,
plus one contiguous cause span and one contiguous effect span (0-based,
inclusive, disjoint). Heads are 0-based with -1 marking the root.

Sequences fed to the model use a fixed padded length M with the layout
[START][token 0 .. token N-1][END][PAD ...]; labeling and adjacency
construction below both follow it.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

# per-position classes over the padded sequence
SPECIAL, CAUSE, EFFECT, OTHER = 1, 2, 3, 4
NUM_CLASSES = 4

ROOT = -1

_SPAN_RE = re.compile(r"^#\s*(cause|effect)\s*=\s*(\d+)\s*\.\.\s*(\d+)\s*$")
_SENT_ID_RE = re.compile(r"^#\s*sent_id\s*=\s*(.+?)\s*$")


class CorpusError(ValueError):
    """Annotation violates the sentence invariants."""


class ParseError(CorpusError):
    """Malformed input file; message carries the line number."""


@dataclass
class AnnotatedSentence:
    """One sentence with POS tags, a dependency tree, and two labeled spans.

    Spans are 0-based inclusive (start, end) pairs; either may be None on
    sentences built for prediction rather than ingested from a labeled
    corpus. Treated as immutable once built; ``validate`` checks every
    invariant and is called by all ingestion paths.
    """

    sent_id: str
    tokens: tuple[str, ...]
    pos_tags: tuple[str, ...]
    heads: tuple[int, ...]
    deprels: tuple[str, ...]
    cause: tuple[int, int] | None = None
    effect: tuple[int, int] | None = None

    def __post_init__(self):
        self.tokens = tuple(self.tokens)
        self.pos_tags = tuple(self.pos_tags)
        self.heads = tuple(int(h) for h in self.heads)
        self.deprels = tuple(self.deprels)
        if self.cause is not None:
            self.cause = (int(self.cause[0]), int(self.cause[1]))
        if self.effect is not None:
            self.effect = (int(self.effect[0]), int(self.effect[1]))

    def __len__(self) -> int:
        return len(self.tokens)

    def validate(self) -> None:
        n = len(self.tokens)
        if n == 0:
            raise CorpusError(f"{self.sent_id}: empty sentence")
        for name in ("pos_tags", "heads", "deprels"):
            if len(getattr(self, name)) != n:
                raise CorpusError(
                    f"{self.sent_id}: {name} has {len(getattr(self, name))} entries "
                    f"for {n} tokens"
                )
        self._validate_span("cause", self.cause, n)
        self._validate_span("effect", self.effect, n)
        if self.cause is not None and self.effect is not None:
            if self.cause[0] <= self.effect[1] and self.effect[0] <= self.cause[1]:
                raise CorpusError(
                    f"{self.sent_id}: cause span {self.cause} overlaps effect span {self.effect}"
                )
        self._validate_tree()

    def _validate_span(self, name: str, span: tuple[int, int] | None, n: int) -> None:
        if span is None:
            return
        lo, hi = span
        if not (0 <= lo <= hi < n):
            raise CorpusError(f"{self.sent_id}: {name} span {span} invalid for {n} tokens")

    def _validate_tree(self) -> None:
        n = len(self.tokens)
        roots = [i for i, h in enumerate(self.heads) if h == ROOT]
        if len(roots) != 1:
            raise CorpusError(
                f"{self.sent_id}: expected exactly one root head, found {len(roots)}"
            )
        for i, h in enumerate(self.heads):
            if h == ROOT:
                continue
            if not (0 <= h < n):
                raise CorpusError(f"{self.sent_id}: token {i} has head {h} out of range")
            if h == i:
                raise CorpusError(f"{self.sent_id}: token {i} is its own head")
        # walk parent links with three-color marking; landing on a node that
        # is already on the current path means the links loop, never reaching
        # the root
        state = [0] * n  # 0 unseen, 1 on current path, 2 cleared
        for start in range(n):
            path: list[int] = []
            i = start
            while state[i] == 0:
                state[i] = 1
                path.append(i)
                if self.heads[i] == ROOT:
                    break
                i = self.heads[i]
            else:
                if state[i] == 1:
                    cycle = path[path.index(i) :]
                    raise CorpusError(
                        f"{self.sent_id}: head links form a cycle through tokens "
                        + " -> ".join(str(t) for t in cycle + [cycle[0]])
                    )
            for j in path:
                state[j] = 2


def label_sequence(sentence: AnnotatedSentence, padded_len: int) -> np.ndarray:
    """Per-position class ids over the padded layout.

    Start, end, and pad positions get the special class; cause-span tokens 2,
    effect-span tokens 3, every other real token 4.
    """
    sentence.validate()
    n = len(sentence)
    if padded_len < n + 2:
        raise CorpusError(
            f"{sentence.sent_id}: padded length {padded_len} cannot hold "
            f"{n} tokens plus start/end"
        )
    labels = np.full(padded_len, SPECIAL, dtype=np.int64)
    labels[1 : n + 1] = OTHER
    if sentence.cause is not None:
        labels[1 + sentence.cause[0] : 2 + sentence.cause[1]] = CAUSE
    if sentence.effect is not None:
        labels[1 + sentence.effect[0] : 2 + sentence.effect[1]] = EFFECT
    return labels


def build_adjacency(
    sentence: AnnotatedSentence,
    padded_len: int,
    directed: bool = False,
    self_loops: bool = True,
) -> np.ndarray:
    """Boolean neighbor matrix over the padded layout.

    Each token is linked to its dependency head (both directions unless
    ``directed``, which keeps only token->head). Start, end, and pad rows
    carry only their self-loop; with ``self_loops=False`` real tokens lose
    theirs but special and pad rows keep it so no row is ever empty.
    """
    sentence.validate()
    n = len(sentence)
    if padded_len < n + 2:
        raise CorpusError(
            f"{sentence.sent_id}: padded length {padded_len} cannot hold "
            f"{n} tokens plus start/end"
        )
    adj = np.eye(padded_len, dtype=bool)
    if not self_loops:
        adj[1 : n + 1, 1 : n + 1] = False
    for child, head in enumerate(sentence.heads):
        if head == ROOT:
            continue
        adj[1 + child, 1 + head] = True
        if not directed:
            adj[1 + head, 1 + child] = True
    return adj


# ------------------------------------------------------------------ CoNLL-U


def parse_conllu(text: str) -> list[AnnotatedSentence]:
    """Read CoNLL-U blocks carrying `# cause = i..j` / `# effect = k..l` comments.

    Multi-word-token ranges and empty nodes are dropped; heads are converted
    from 1-based to 0-based with -1 for the root. Blocks without both span
    comments are skipped and counted in a single warning.
    """
    sentences: list[AnnotatedSentence] = []
    skipped = 0
    block: list[tuple[int, str]] = []
    auto_id = 0

    def flush():
        nonlocal skipped, auto_id
        if not block:
            return
        auto_id += 1
        parsed = _parse_block(block, default_id=f"s{auto_id}")
        if parsed is None:
            skipped += 1
        else:
            sentences.append(parsed)
        block.clear()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        if raw.strip() == "":
            flush()
        else:
            block.append((lineno, raw))
    flush()
    if skipped:
        log.warning("skipped %d CoNLL-U sentence(s) without cause/effect comments", skipped)
    return sentences


def _parse_block(block: list[tuple[int, str]], default_id: str) -> AnnotatedSentence | None:
    sent_id = default_id
    spans: dict[str, tuple[int, int]] = {}
    tokens, tags, heads, rels = [], [], [], []
    for lineno, line in block:
        if line.startswith("#"):
            m = _SPAN_RE.match(line)
            if m:
                spans[m.group(1)] = (int(m.group(2)), int(m.group(3)))
                continue
            m = _SENT_ID_RE.match(line)
            if m:
                sent_id = m.group(1)
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ParseError(f"line {lineno}: expected 10 tab-separated columns, got {len(cols)}")
        tok_id = cols[0]
        if "-" in tok_id or "." in tok_id:
            continue  # multi-word token range or empty node
        try:
            int(tok_id)
        except ValueError:
            raise ParseError(f"line {lineno}: bad token id {tok_id!r}") from None
        try:
            head = int(cols[6])
        except ValueError:
            raise ParseError(f"line {lineno}: HEAD column must be an integer, got {cols[6]!r}") from None
        tokens.append(cols[1])
        tags.append(cols[3])
        heads.append(ROOT if head == 0 else head - 1)
        rels.append(cols[7])
    if not tokens:
        return None
    if "cause" not in spans or "effect" not in spans:
        return None
    sentence = AnnotatedSentence(
        sent_id=sent_id,
        tokens=tokens,
        pos_tags=tags,
        heads=heads,
        deprels=rels,
        cause=spans["cause"],
        effect=spans["effect"],
    )
    sentence.validate()
    return sentence


def write_conllu(sentences: Iterable[AnnotatedSentence]) -> str:
    """Render sentences as CoNLL-U blocks with span comment lines."""
    blocks = []
    for s in sentences:
        lines = [
            f"# sent_id = {s.sent_id}",
            f"# text = {' '.join(s.tokens)}",
            f"# cause = {s.cause[0]}..{s.cause[1]}",
            f"# effect = {s.effect[0]}..{s.effect[1]}",
        ]
        for i, (form, tag, head, rel) in enumerate(
            zip(s.tokens, s.pos_tags, s.heads, s.deprels)
        ):
            conllu_head = 0 if head == ROOT else head + 1
            lines.append(
                f"{i + 1}\t{form}\t_\t{tag}\t_\t_\t{conllu_head}\t{rel}\t_\t_"
            )
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")


# -------------------------------------------------------------------- JSONL

_JSONL_FIELDS = ("id", "tokens", "pos_tags", "heads", "deprels", "cause", "effect")


def _check_str_list(value, lineno: int, name: str) -> None:
    if not isinstance(value, list) or not all(isinstance(x, str) for x in value):
        raise ParseError(f"line {lineno}: field {name!r} must be a list of strings")


def _check_int_pair(value, lineno: int, name: str) -> None:
    ok = (
        isinstance(value, list)
        and len(value) == 2
        and all(isinstance(x, int) and not isinstance(x, bool) for x in value)
    )
    if not ok:
        raise ParseError(f"line {lineno}: field {name!r} must be a pair of integers")


def read_jsonl(path, require_spans: bool = True,
               validate: bool = True) -> list[AnnotatedSentence]:
    """Load a JSONL corpus; schema errors name the line and field.

    With ``require_spans=False``, ``cause`` and ``effect`` may be null or
    absent (prediction input); otherwise both must be integer pairs.
    ``validate=False`` skips the semantic checks (tree shape, span bounds)
    so a corpus auditor can count violations instead of dying on the first.
    """
    sentences = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if raw.strip() == "":
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as e:
                raise ParseError(f"line {lineno}: invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict):
                raise ParseError(f"line {lineno}: expected a JSON object")
            for name in _JSONL_FIELDS:
                if name in ("cause", "effect") and not require_spans:
                    continue
                if name not in obj:
                    raise ParseError(f"line {lineno}: missing field {name!r}")
            if not isinstance(obj["id"], str):
                raise ParseError(f"line {lineno}: field 'id' must be a string")
            _check_str_list(obj["tokens"], lineno, "tokens")
            _check_str_list(obj["pos_tags"], lineno, "pos_tags")
            _check_str_list(obj["deprels"], lineno, "deprels")
            heads = obj["heads"]
            if not isinstance(heads, list) or not all(
                isinstance(h, int) and not isinstance(h, bool) for h in heads
            ):
                raise ParseError(f"line {lineno}: field 'heads' must be a list of integers")
            spans: dict[str, tuple[int, int] | None] = {}
            for name in ("cause", "effect"):
                value = obj.get(name)
                if value is None and not require_spans:
                    spans[name] = None
                    continue
                _check_int_pair(value, lineno, name)
                spans[name] = (value[0], value[1])
            sentence = AnnotatedSentence(
                sent_id=obj["id"],
                tokens=obj["tokens"],
                pos_tags=obj["pos_tags"],
                heads=heads,
                deprels=obj["deprels"],
                cause=spans["cause"],
                effect=spans["effect"],
            )
            if validate:
                try:
                    sentence.validate()
                except CorpusError as e:
                    raise ParseError(f"line {lineno}: {e}") from None
            sentences.append(sentence)
    return sentences


def write_jsonl(path, sentences: Iterable[AnnotatedSentence]) -> None:
    """Write one JSON object per sentence, keys in schema order."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            obj = {
                "id": s.sent_id,
                "tokens": list(s.tokens),
                "pos_tags": list(s.pos_tags),
                "heads": list(s.heads),
                "deprels": list(s.deprels),
                "cause": None if s.cause is None else list(s.cause),
                "effect": None if s.effect is None else list(s.effect),
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


# ------------------------------------------------------------------- splits


def split_dataset(
    sentences: Sequence[AnnotatedSentence],
    ratios: tuple[float, float, float] = (0.6, 0.3, 0.1),
    seed: int = 0,
) -> tuple[list[AnnotatedSentence], list[AnnotatedSentence], list[AnnotatedSentence]]:
    """Deterministic shuffle and split into (train, test, validation).

    Partition sizes are floored from the ratios; the remainder goes to train.
    """
    if not sentences:
        raise CorpusError("cannot split an empty corpus")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise CorpusError(f"split ratios {ratios} do not sum to 1")
    n = len(sentences)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(n * ratios[0])
    n_test = int(n * ratios[1])
    n_val = int(n * ratios[2])
    n_train += n - (n_train + n_test + n_val)
    shuffled = [sentences[i] for i in order]
    train = shuffled[:n_train]
    test = shuffled[n_train : n_train + n_test]
    val = shuffled[n_train + n_test :]
    if not val:
        log.warning("validation split is empty (%d sentences at ratios %s)", n, ratios)
    return train, test, val
