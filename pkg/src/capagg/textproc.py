"""Tokenization, clipped n-gram precision, sentence BLEU-4 and caption uniqueness."""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

__all__ = [
    "PUNCTUATION",
    "SMOOTHING_EPS",
    "tokenize",
    "ngrams",
    "modified_precision",
    "brevity_penalty",
    "bleu4",
    "uniqueness",
    "uniqueness_scores",
]

PUNCTUATION = ".,;:!?\"'()"
SMOOTHING_EPS = 1e-9

_STRIP = str.maketrans("", "", PUNCTUATION)

Tokens = Sequence[str]


def tokenize(text: str) -> list[str]:
    """Lowercase, drop ``PUNCTUATION`` characters and split on whitespace.

    >>> tokenize("Four airplanes are parked at the airport.")
    ['four', 'airplanes', 'are', 'parked', 'at', 'the', 'airport']
    """
    return text.lower().translate(_STRIP).split()


def ngrams(tokens: Tokens, n: int) -> Counter:
    """Multiset of the order-``n`` n-grams in ``tokens``."""
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def modified_precision(candidate: Tokens, references: Sequence[Tokens], n: int) -> float:
    """Clipped n-gram precision of ``candidate`` against all ``references``.

    Each candidate n-gram count is clipped at its maximum count in any single
    reference. Returns 0.0 when the candidate has no n-grams of order ``n``.
    """
    if not references:
        raise ValueError("modified_precision needs at least one reference")
    if not 1 <= n <= 4:
        raise ValueError(f"n-gram order must be in 1..4, got {n}")
    counts = ngrams(candidate, n)
    total = sum(counts.values())
    if total == 0:
        return 0.0
    max_ref: Counter = Counter()
    for ref in references:
        max_ref |= ngrams(ref, n)
    clipped = sum(min(c, max_ref[g]) for g, c in counts.items())
    return clipped / total


def brevity_penalty(candidate_len: int, references: Sequence[Tokens]) -> float:
    # closest reference length, ties go to the shorter one
    r = min((len(ref) for ref in references), key=lambda L: (abs(L - candidate_len), L))
    if candidate_len == 0:
        return 0.0
    if candidate_len >= r:
        return 1.0
    return math.exp(1.0 - r / candidate_len)


def bleu4(candidate: Tokens, references: Sequence[Tokens]) -> float:
    """Sentence-level BLEU-4 with uniform weights.

    Zero precisions are floored at ``SMOOTHING_EPS`` before the geometric
    mean, so short or disjoint candidates score close to, not exactly, zero.
    An empty candidate scores 0.0.
    """
    if not references:
        raise ValueError("bleu4 needs at least one reference")
    if len(candidate) == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        p = modified_precision(candidate, references, n)
        log_sum += math.log(p if p > 0.0 else SMOOTHING_EPS)
    score = brevity_penalty(len(candidate), references) * math.exp(log_sum / 4.0)
    return min(1.0, max(0.0, score))


def uniqueness(captions: Sequence[Tokens], j: int) -> float:
    """One minus the BLEU-4 of caption ``j`` against its siblings."""
    if len(captions) < 2:
        raise ValueError(f"uniqueness needs at least 2 captions, got {len(captions)}")
    if not 0 <= j < len(captions):
        raise IndexError(f"caption index {j} out of range for {len(captions)} captions")
    refs = [c for k, c in enumerate(captions) if k != j]
    return 1.0 - bleu4(captions[j], refs)


def uniqueness_scores(captions: Sequence[Tokens]) -> list[float]:
    return [uniqueness(captions, j) for j in range(len(captions))]
