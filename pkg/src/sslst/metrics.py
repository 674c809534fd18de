"""Word error rate and corpus BLEU."""
from __future__ import annotations

import collections
import math
from typing import Sequence

from .textproc import tokenize


def _words(x) -> list:
    return x.split() if isinstance(x, str) else list(x)


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    """Levenshtein distance with unit substitution, insertion and deletion costs."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def wer(reference, hypothesis) -> float:
    ref, hyp = _words(reference), _words(hypothesis)
    if not ref:
        raise ValueError("reference must contain at least one token")
    return edit_distance(ref, hyp) / len(ref)


def corpus_wer(references: Sequence, hypotheses: Sequence) -> float:
    if len(references) != len(hypotheses):
        raise ValueError(f"{len(references)} references vs {len(hypotheses)} hypotheses")
    errors = words = 0
    for r, h in zip(references, hypotheses):
        r, h = _words(r), _words(h)
        errors += edit_distance(r, h)
        words += len(r)
    if words == 0:
        raise ValueError("references contain no tokens")
    return errors / words


def _ngrams(tokens: list[str], n: int) -> collections.Counter:
    return collections.Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(references: Sequence[str], hypotheses: Sequence[str], max_order: int = 4):
    """Pooled clipped matches, hypothesis n-gram totals, and the two corpus lengths."""
    if len(references) != len(hypotheses):
        raise ValueError(f"{len(references)} references vs {len(hypotheses)} hypotheses")
    matches = [0] * max_order
    totals = [0] * max_order
    ref_len = hyp_len = 0
    for ref, hyp in zip(references, hypotheses):
        r = tokenize(ref.lower())
        h = tokenize(hyp.lower())
        ref_len += len(r)
        hyp_len += len(h)
        for n in range(1, max_order + 1):
            hc = _ngrams(h, n)
            rc = _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    return matches, totals, ref_len, hyp_len


def bleu(references: Sequence[str], hypotheses: Sequence[str], max_order: int = 4) -> float:
    """Case-insensitive tokenised corpus BLEU in [0, 100], single reference, no smoothing.

    Orders for which the hypotheses contain no n-grams at all are left out of
    the geometric mean; any order with n-grams but zero matches gives 0.
    """
    matches, totals, ref_len, hyp_len = bleu_stats(references, hypotheses, max_order)
    if hyp_len == 0:
        return 0.0
    logs = []
    for m, t in zip(matches, totals):
        if t == 0:
            continue
        if m == 0:
            return 0.0
        logs.append(math.log(m / t))
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(sum(logs) / len(logs))


def format_report(name: str, value: float) -> str:
    return f"{name}={value:.2f}"
