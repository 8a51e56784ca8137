"""Mixture sampling over K corpora.

Each draw picks corpus ``k`` with probability ``w_k`` and then a record of
that corpus uniformly at random. Every draw consumes exactly two uniforms
from the generator regardless of K or W, so a sampler with W = (1, 0, ...)
replays the same record sequence as a single-corpus sampler on corpus 1.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .corpus import Corpus

CLAMP = 1e-6
SIMPLEX_TOL = 1e-9


class WeightsError(ValueError):
    pass


def check_weights(w: Sequence[float], k: int | None = None) -> np.ndarray:
    """Validate a point on the simplex and return it as a float array."""
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if k is not None and w.shape[0] != k:
        raise WeightsError(f"expected {k} weights, got {w.shape[0]}")
    if w.shape[0] == 0 or not np.isfinite(w).all():
        raise WeightsError("weights must be a non-empty finite vector")
    if (w < 0).any() or (w > 1).any():
        raise WeightsError(f"weights must lie in [0, 1]: {w.tolist()}")
    if abs(w.sum() - 1.0) > SIMPLEX_TOL:
        raise WeightsError(f"weights must sum to 1 (sum={w.sum()!r})")
    return w


def clamp_weights(w: Sequence[float], floor: float = CLAMP) -> np.ndarray:
    """Zero out components below ``floor`` and renormalize."""
    w = np.array(w, dtype=np.float64)
    w[w < floor] = 0.0
    if w.sum() <= 0:
        raise WeightsError("all weights fall below the clamp floor")
    return w / w.sum()


def uniform_weights(k: int) -> np.ndarray:
    return np.full(k, 1.0 / k)


class MixtureSampler:
    """Draws ``(corpus_index, record)`` pairs from the mixture M(D_1..D_K | W)."""

    def __init__(self, corpora: Sequence[Corpus], weights: Sequence[float], seed=0):
        self.corpora = tuple(corpora)
        self.weights = clamp_weights(check_weights(weights, len(self.corpora)))
        cdf = np.cumsum(self.weights)
        # everything from the last positive weight on is exactly 1, so
        # rounding can never route a draw to a trailing zero-weight corpus
        cdf[int(np.flatnonzero(self.weights)[-1]):] = 1.0
        self._cdf = cdf
        self._sizes = np.array([c.size for c in self.corpora], dtype=np.int64)
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    @property
    def k(self) -> int:
        return len(self.corpora)

    def draw_indices(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Corpus and record indices of ``n`` independent draws."""
        u = self.rng.random((n, 2))
        ks = np.searchsorted(self._cdf, u[:, 0], side="right")
        idx = (u[:, 1] * self._sizes[ks]).astype(np.int64)
        return ks, idx

    def sample_minibatch(self, batch_size: int) -> list[tuple[int, np.ndarray]]:
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        ks, idx = self.draw_indices(batch_size)
        return [(int(k), self.corpora[k].record(i)) for k, i in zip(ks, idx)]

    def sample_record(self) -> tuple[int, np.ndarray]:
        return self.sample_minibatch(1)[0]


def epoch_iterations(corpora: Sequence[Corpus], batch_size: int) -> int:
    """Iterations per epoch: ceil(sum N_k / batch_size), independent of W."""
    total = sum(c.size for c in corpora)
    return -(-total // batch_size)
