"""Beam search and greedy decoding over an abstract incremental scorer."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .textproc import BOS_ID, EOS_ID


@dataclass
class Hypothesis:
    tokens: list[int]
    logprob: float
    alpha: float = 1.0

    @property
    def length(self) -> int:
        return len(self.tokens) - 1

    @property
    def score(self) -> float:
        return self.logprob / max(self.length, 1) ** self.alpha


class Scorer(Protocol):
    """What decoding needs from a model: batched next-token log-probabilities."""

    vocab_size: int

    def step(self, tokens: np.ndarray, state) -> tuple[np.ndarray, object]:
        ...

    def reorder(self, state, index: np.ndarray):
        ...


def beam_search(scorer: Scorer, state, beam: int = 5, max_len: int = 200, alpha: float = 1.0,
                bos: int = BOS_ID, eos: int | None = EOS_ID) -> tuple[Hypothesis, list[Hypothesis]]:
    """Best hypothesis and the n-best list, ranked by ``logprob / length**alpha``.

    ``state`` describes a single hypothesis; ``scorer.step`` receives the last
    token of every live hypothesis.  Candidates are ordered by cumulative
    log-probability, ties broken by token id and then by parent rank.  With
    ``eos=None`` nothing is finalised early and every hypothesis has
    ``max_len`` tokens.
    """
    if beam < 1 or max_len < 1:
        raise ValueError("beam and max_len must be >= 1")
    live_tokens = [[bos]]
    live_scores = np.zeros(1)
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        last = np.array([t[-1] for t in live_tokens])
        logprobs, state = scorer.step(last, state)
        n, vocab = logprobs.shape
        cand = (live_scores[:, None] + logprobs).reshape(-1)
        parent = np.repeat(np.arange(n), vocab)
        token = np.tile(np.arange(vocab), n)
        order = np.lexsort((parent, token, -cand))[:beam - len(finished)]
        keep, new_tokens, new_scores = [], [], []
        for k in order:
            seq = live_tokens[parent[k]] + [int(token[k])]
            if eos is not None and token[k] == eos:
                finished.append(Hypothesis(seq, float(cand[k]), alpha))
            else:
                keep.append(parent[k])
                new_tokens.append(seq)
                new_scores.append(cand[k])
        if not new_tokens or len(finished) >= beam:
            live_tokens = []
            break
        state = scorer.reorder(state, np.array(keep))
        live_tokens, live_scores = new_tokens, np.array(new_scores)
    finished.extend(Hypothesis(t, float(s), alpha) for t, s in zip(live_tokens, live_scores))
    nbest = sorted(finished, key=lambda h: (-h.score, h.tokens))
    return nbest[0], nbest


def greedy_decode(scorer: Scorer, state, max_len: int = 200, bos: int = BOS_ID,
                  eos: int | None = EOS_ID) -> Hypothesis:
    tokens, total = [bos], 0.0
    for _ in range(max_len):
        logprobs, state = scorer.step(np.array([tokens[-1]]), state)
        best = int(np.argmax(logprobs[0]))
        total += float(logprobs[0, best])
        tokens.append(best)
        if eos is not None and best == eos:
            break
    return Hypothesis(tokens, total)


def strip_specials(tokens: Sequence[int], bos: int = BOS_ID, eos: int = EOS_ID) -> list[int]:
    out = list(tokens)
    if out and out[0] == bos:
        out = out[1:]
    if out and out[-1] == eos:
        out = out[:-1]
    return out


def write_hypotheses(path, rows) -> None:
    """TSV of (utterance id, detokenised hypothesis, normalised score), sorted by id."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(["id", "hypothesis", "score"])
        for uid, text, score in sorted(rows, key=lambda r: r[0]):
            writer.writerow([uid, text, f"{score:.6f}"])


def read_hypotheses(path) -> dict[str, str]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        return {row["id"]: row["hypothesis"] for row in reader}
