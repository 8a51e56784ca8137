"""Add-k smoothed count n-gram model (used for the ngram-opt static baseline)."""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus, Vocab


@dataclass
class NgramModel:
    order: int
    vocab_size: int
    smoothing_k: float = 0.1
    counts: dict[tuple[int, ...], Counter] = field(default_factory=lambda: defaultdict(Counter))
    context_totals: Counter = field(default_factory=Counter)

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if not self.smoothing_k > 0:
            raise ValueError("smoothing_k must be > 0")

    def prob(self, context: tuple[int, ...], token: int) -> float:
        c = self.counts.get(context)
        num = (c[token] if c is not None else 0) + self.smoothing_k
        return num / (self.context_totals[context] + self.smoothing_k * self.vocab_size)

    def log_prob_records(self, records) -> np.ndarray:
        if isinstance(records, Corpus):
            records = records.records
        return np.array([ngram_log_prob(self, r) for r in records])

    def dump(self, vocab: Vocab | None = None) -> str:
        """Sorted text dump of the counts, one ``context -> token count`` per line."""
        name = (lambda i: vocab.tokens[i]) if vocab is not None else str
        lines = []
        for ctx in sorted(self.counts):
            for tok, n in sorted(self.counts[ctx].items()):
                lines.append(f"{' '.join(name(i) for i in ctx) or '()'} -> {name(tok)} {n}")
        return "\n".join(lines) + "\n"


def _events(record, order: int):
    """(context, token) pairs of a record with BOS padding and a final EOS."""
    hist = (Vocab.bos_id,) * (order - 1)
    for tok in list(map(int, record)) + [Vocab.eos_id]:
        yield hist, tok
        if order > 1:
            hist = hist[1:] + (tok,)


def fit_ngram(corpus: Corpus, order: int = 3, smoothing_k: float = 0.1) -> NgramModel:
    model = NgramModel(order, len(corpus.vocab), smoothing_k)
    for rec in corpus.records:
        for ctx, tok in _events(rec, order):
            model.counts[ctx][tok] += 1
            model.context_totals[ctx] += 1
    model.counts = dict(model.counts)
    return model


def ngram_log_prob(model: NgramModel, record) -> float:
    return sum(math.log(model.prob(ctx, tok)) for ctx, tok in _events(record, model.order))
