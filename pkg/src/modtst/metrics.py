"""Corpus BLEU and the harmonic-mean aggregate."""
from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

from .corpus import split_words
from .exceptions import ContractError


def _ngrams(words: Sequence[str], n: int) -> Counter:
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


def _words(text) -> list[str]:
    return split_words(text) if isinstance(text, str) else list(text)


def bleu_statistics(hypothesis, references, max_n: int = 4) -> tuple[list[int], list[int], int, int]:
    """Clipped n-gram matches, totals, hypothesis length and closest reference length."""
    hyp = _words(hypothesis)
    refs = [_words(r) for r in references]
    matches, totals = [], []
    for n in range(1, max_n + 1):
        counts = _ngrams(hyp, n)
        ceiling: Counter = Counter()
        for r in refs:
            ceiling |= _ngrams(r, n)
        matches.append(sum(min(c, ceiling[g]) for g, c in counts.items()))
        totals.append(max(len(hyp) - n + 1, 0))
    # closest reference length, ties broken toward the shorter one
    ref_len = min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
    return matches, totals, len(hyp), ref_len


def corpus_bleu(hypotheses: Sequence, references: Sequence[Sequence], max_n: int = 4) -> float:
    """Corpus-level BLEU in [0, 1]: clipped multi-reference precisions, brevity penalty, no smoothing.

    Strings are split with the shared word tokenizer (case-sensitive).
    """
    if len(hypotheses) == 0:
        raise ContractError("corpus_bleu: no hypotheses")
    if len(hypotheses) != len(references):
        raise ContractError(f"corpus_bleu: {len(hypotheses)} hypotheses vs {len(references)} reference lists")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, refs in zip(hypotheses, references):
        if isinstance(refs, str) or len(refs) == 0:
            raise ContractError("corpus_bleu: every entry needs a non-empty list of references")
        m, t, h, r = bleu_statistics(hyp, refs, max_n)
        matches = [a + b for a, b in zip(matches, m)]
        totals = [a + b for a, b in zip(totals, t)]
        hyp_len += h
        ref_len += r
    if hyp_len == 0 or min(matches) == 0:
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    brevity = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return brevity * math.exp(log_precision)


def harmonic_mean(acc: float, bleu: float) -> float:
    for name, v in (("acc", acc), ("bleu", bleu)):
        if not 0.0 <= v <= 1.0:
            raise ContractError(f"harmonic_mean: {name}={v} outside [0, 1]")
    if acc + bleu == 0:
        return 0.0
    return 2.0 * acc * bleu / (acc + bleu)
