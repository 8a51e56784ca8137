"""Synthetic multi-corpora adaptation setups.

``adaptation_setup`` builds the three-corpus scenario used throughout the
tests and bundled configs: a small in-domain corpus drawn from the target
Markov source, a large corpus from a related source (the target chain
blended with an unrelated one), and a large noise corpus with uniform
transitions. Validation and test sets come from the target source.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, CorpusSet, MarkovSpec, generate_synthetic


def random_chain(n_states: int, concentration: float, rng: np.random.Generator) -> np.ndarray:
    rows = rng.dirichlet(np.full(n_states, concentration), size=n_states)
    return rows / rows.sum(axis=1, keepdims=True)


def make_sources(seed: int, n_states: int = 64, concentration: float = 0.1, related_mix: float = 0.7,
                 min_len: int = 6, max_len: int = 14) -> dict[str, MarkovSpec]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7919]))
    states = tuple(f"w{i:02d}" for i in range(n_states))
    target = random_chain(n_states, concentration, rng)
    other = random_chain(n_states, concentration, rng)
    related = related_mix * target + (1.0 - related_mix) * other
    related /= related.sum(axis=1, keepdims=True)
    noise = np.full((n_states, n_states), 1.0 / n_states)
    mk = lambda name, t: MarkovSpec(states, t, None, min_len, max_len, name)  # noqa: E731
    return {"target": mk("target", target), "related": mk("related", related), "noise": mk("noise", noise)}


@dataclass
class AdaptationSetup:
    corpus_set: CorpusSet
    test: Corpus
    sources: dict[str, MarkovSpec]


def adaptation_setup(seed: int, n_target: int = 2000, n_related: int = 20000, n_noise: int = 20000,
                     n_valid: int = 500, n_test: int = 2000, **source_kw) -> AdaptationSetup:
    sources = make_sources(seed, **source_kw)
    vocab = sources["target"].vocab()
    ss = np.random.SeedSequence([seed, 104729]).generate_state(5)
    gen = lambda key, n, i, name: generate_synthetic(sources[key], n, int(ss[i]), vocab, name)  # noqa: E731
    corpora = (
        gen("target", n_target, 0, "in_domain"),
        gen("related", n_related, 1, "related"),
        gen("noise", n_noise, 2, "noise"),
    )
    valid = gen("target", n_valid, 3, "valid")
    test = gen("target", n_test, 4, "test")
    return AdaptationSetup(CorpusSet(corpora, valid), test, sources)
