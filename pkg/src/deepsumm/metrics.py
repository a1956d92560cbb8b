"""Corpus BLEU-4 and perplexity."""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

from .errors import ContractError


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[str]],
                max_n: int = 4) -> float:
    """Cumulative corpus BLEU with uniform weights and no smoothing, in [0, 1].

    Clipped n-gram matches and candidate n-gram totals are pooled over the
    whole corpus before taking precisions. Any zero pooled precision gives 0.
    Brevity penalty is ``exp(1 - r/c)`` unless the pooled candidate length
    exceeds the pooled reference length.
    """
    if len(candidates) != len(references):
        raise ContractError(f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise ContractError("corpus_bleu on an empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    cand_len = ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            c_counts = ngram_counts(cand, n)
            r_counts = ngram_counts(ref, n)
            matches[n - 1] += sum(min(c, r_counts[g]) for g, c in c_counts.items())
            totals[n - 1] += max(len(cand) - n + 1, 0)
    if min(matches) == 0:
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    brevity = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return brevity * math.exp(log_precision)


def perplexity(total_ce_loss: float, token_count: int) -> float:
    """exp(total cross-entropy / number of non-pad target tokens)."""
    if token_count <= 0:
        raise ContractError("perplexity needs at least one target token")
    return math.exp(total_ce_loss / token_count)
