"""Shared fixtures: the hand-annotated example sentence and random-tree helpers."""

import numpy as np
import pytest

from depcause.corpus import AnnotatedSentence


@pytest.fixture
def vitamin_sentence():
    """Five-token running example with a three-token cause and one-token effect."""
    return AnnotatedSentence(
        sent_id="vitamin",
        tokens=("Vitamin", "D", "deficiency", "causes", "diabetes"),
        pos_tags=("NOUN", "NOUN", "NOUN", "VERB", "NOUN"),
        heads=(1, 2, 3, -1, 3),
        deprels=("compound", "compound", "nsubj", "root", "obj"),
        cause=(0, 2),
        effect=(4, 4),
    )


def make_tree_heads(rng: np.random.Generator, n: int) -> list[int]:
    """Random labeled tree as 0-based head links with a single -1 root."""
    perm = rng.permutation(n)
    heads = [0] * n
    heads[perm[0]] = -1
    for pos in range(1, n):
        heads[perm[pos]] = int(perm[rng.integers(0, pos)])
    return heads


def make_sentence(rng: np.random.Generator, n: int, sent_id: str = "r") -> AnnotatedSentence:
    """Random sentence with a valid tree and disjoint cause/effect spans."""
    if n < 2:
        raise ValueError("need at least 2 tokens for disjoint spans")
    split = int(rng.integers(1, n))
    lo_s = int(rng.integers(0, split))
    lo = (lo_s, int(rng.integers(lo_s, split)))
    hi_s = int(rng.integers(split, n))
    hi = (hi_s, int(rng.integers(hi_s, n)))
    cause, effect = (lo, hi) if rng.random() < 0.5 else (hi, lo)
    tags = ("NOUN", "VERB", "ADJ", "ADP", "DET")
    return AnnotatedSentence(
        sent_id=sent_id,
        tokens=tuple(f"w{i}" for i in range(n)),
        pos_tags=tuple(tags[int(rng.integers(0, len(tags)))] for _ in range(n)),
        heads=make_tree_heads(rng, n),
        deprels=tuple("dep" for _ in range(n)),
        cause=cause,
        effect=effect,
    )
