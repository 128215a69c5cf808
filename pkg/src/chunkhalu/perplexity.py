"""Perplexity scoring with a pluggable token scorer and a built-in add-k n-gram LM."""

from __future__ import annotations

import math
import statistics
from collections import Counter
from typing import Protocol, Sequence

from .tokenizer import tokenize

BOS = "<s>"
UNK_TOKEN = "<unk>"


class Scorer(Protocol):
    def log_probs(self, tokens: Sequence[str]) -> list[float]:
        """Natural-log probability of each token given the tokens before it."""


class NGramLM:
    """Add-k smoothed n-gram model.

    ``P(w | h) = (count(h, w) + k) / (count(h) + k * V)`` where ``V`` counts the
    training token types plus ``<unk>``. Histories are left-padded with ``<s>``.
    """

    def __init__(self, order: int, k: float, counts: list[Counter], context_counts: list[Counter], vocab: frozenset):
        self.order = order
        self.k = k
        self.counts = counts
        self.context_counts = context_counts
        self.vocab = vocab

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def prob(self, word: str, history: Sequence[str] = ()) -> float:
        if word not in self.vocab:
            word = UNK_TOKEN
        h = tuple(history)[-(self.order - 1):] if self.order > 1 else ()
        h = (BOS,) * (self.order - 1 - len(h)) + h
        n = self.order - 1
        num = self.counts[n][h + (word,)] + self.k
        den = self.context_counts[n][h] + self.k * self.vocab_size
        return num / den

    def log_probs(self, tokens: Sequence[str]) -> list[float]:
        n = self.order - 1
        return [math.log(self.prob(w, tokens[max(0, i - n) : i] if n else ())) for i, w in enumerate(tokens)]


def train_lm(corpus: Sequence[str], order: int = 3, k: float = 0.01) -> NGramLM:
    if order < 1:
        raise ValueError("order must be at least 1")
    if k <= 0:
        raise ValueError("k must be positive")
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    counts = [Counter() for _ in range(order)]
    context_counts = [Counter() for _ in range(order)]
    vocab = {UNK_TOKEN}
    for text in corpus:
        toks = tokenize(text)
        vocab.update(toks)
        padded = [BOS] * (order - 1) + toks
        for i in range(order - 1, len(padded)):
            for n in range(order):
                h = tuple(padded[i - n : i])
                counts[n][h + (padded[i],)] += 1
                context_counts[n][h] += 1
    return NGramLM(order, k, counts, context_counts, frozenset(vocab))


class UniformScorer:
    """Assigns probability 1/V to every token."""

    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size

    def log_probs(self, tokens: Sequence[str]) -> list[float]:
        return [-math.log(self.vocab_size)] * len(tokens)


def perplexity(scorer: Scorer, text: str) -> float:
    """exp of the mean negative log-likelihood over the text's tokens."""
    tokens = tokenize(text)
    if not tokens:
        raise ValueError("text has no tokens")
    lp = scorer.log_probs(tokens)
    return math.exp(-math.fsum(lp) / len(tokens))


def verify_corpus(scorer: Scorer, originals: Sequence[str], injected: Sequence[str]) -> list[dict]:
    """Mean/median perplexity per group; ``delta`` is relative to the originals."""
    if not originals or not injected:
        raise ValueError("both groups need at least one text")
    rows = []
    base = None
    for group, texts in (("original", originals), ("injected", injected)):
        ppl = [perplexity(scorer, t) for t in texts]
        mean = statistics.fmean(ppl)
        base = mean if base is None else base
        rows.append(
            {
                "group": group,
                "count": len(ppl),
                "mean_ppl": mean,
                "median_ppl": statistics.median(ppl),
                "delta": mean - base,
            }
        )
    return rows
