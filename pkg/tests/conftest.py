import numpy as np
import pytest

from adaptmix.corpus import Corpus, CorpusSet, MarkovSpec, Vocab, generate_synthetic


def make_corpus(name, vocab, lines):
    return Corpus.from_records(name, vocab, [vocab.encode(ln) for ln in lines])


@pytest.fixture
def abc_vocab():
    return Vocab(["a", "b", "c", "d"])


@pytest.fixture
def two_sources():
    states = ("a", "b", "c", "d")
    target = MarkovSpec(states, np.array([[0.7, 0.1, 0.1, 0.1],
                                          [0.1, 0.7, 0.1, 0.1],
                                          [0.1, 0.1, 0.7, 0.1],
                                          [0.1, 0.1, 0.1, 0.7]]), min_len=3, max_len=8, name="target")
    noise = MarkovSpec(states, np.full((4, 4), 0.25), min_len=3, max_len=8, name="noise")
    return target, noise


@pytest.fixture
def small_set(two_sources):
    target, noise = two_sources
    vocab = target.vocab()
    corpora = (generate_synthetic(target, 60, 1, vocab, "in_domain"),
               generate_synthetic(noise, 120, 2, vocab, "noise"))
    return CorpusSet(corpora, generate_synthetic(target, 40, 3, vocab, "valid"))


# acceptance criteria report: test_acceptance.py records one verdict per criterion
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
