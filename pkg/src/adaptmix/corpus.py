"""Vocabulary, corpora and synthetic Markov sources.

Tokenization is whitespace splitting, one record per line. A corpus stores
its records as one flat ``int32`` token array plus an ``offsets`` array
(record ``i`` is ``tokens[offsets[i]:offsets[i + 1]]``); BOS/EOS are never
stored and are added at scoring time.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

UNK = "<unk>"
BOS = "<s>"
EOS = "</s>"
RESERVED = (UNK, BOS, EOS)


class CorpusError(ValueError):
    """Raised for malformed corpora, vocabularies or Markov specs."""


class Vocab:
    """Dense token <-> id map. Ids 0, 1, 2 are UNK, BOS, EOS."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:3]) != RESERVED:
            tokens = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        if len(set(tokens)) != len(tokens):
            raise CorpusError("duplicate tokens in vocabulary")
        self.tokens = tuple(tokens)
        self._index = {t: i for i, t in enumerate(self.tokens)}

    unk_id = 0
    bos_id = 1
    eos_id = 2

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def __hash__(self) -> int:
        return hash(self.tokens)

    def __repr__(self) -> str:
        return f"Vocab(size={len(self)})"

    def id(self, token: str) -> int:
        return self._index.get(token, self.unk_id)

    def encode(self, text: str) -> np.ndarray:
        return np.array([self.id(t) for t in text.split()], dtype=np.int32)

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self.tokens[int(i)] for i in ids)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln])


def build_vocab(files: Sequence, max_size: int) -> Vocab:
    """Keep the ``max_size - 3`` most frequent tokens; ties go to the lexicographically smaller token."""
    if max_size < 3:
        raise CorpusError("max_size must leave room for UNK/BOS/EOS")
    counts: Counter = Counter()
    for f in files:
        with open(f, encoding="utf-8") as fh:
            for line in fh:
                counts.update(t for t in line.split() if t not in RESERVED)
    if not counts:
        raise CorpusError("no tokens")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab(list(RESERVED) + [t for t, _ in ranked[: max_size - 3]])


@dataclass(frozen=True, eq=False)
class Corpus:
    name: str
    vocab: Vocab
    tokens: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        if self.offsets.ndim != 1 or self.offsets.shape[0] < 2:
            raise CorpusError(f"corpus {self.name!r} has no records")
        lengths = np.diff(self.offsets)
        if (lengths < 1).any():
            raise CorpusError(f"corpus {self.name!r} contains an empty record")
        if self.tokens.size and (self.tokens.min() < 0 or self.tokens.max() >= len(self.vocab)):
            raise CorpusError(f"corpus {self.name!r} has token ids outside the vocabulary")
        self.tokens.setflags(write=False)
        self.offsets.setflags(write=False)

    @classmethod
    def from_records(cls, name: str, vocab: Vocab, records: Iterable[Sequence[int]]) -> "Corpus":
        records = [np.asarray(r, dtype=np.int32) for r in records]
        offsets = np.zeros(len(records) + 1, dtype=np.int64)
        if records:
            np.cumsum([r.shape[0] for r in records], out=offsets[1:])
        tokens = np.concatenate(records) if records else np.zeros(0, dtype=np.int32)
        return cls(name, vocab, tokens.astype(np.int32), offsets)

    @property
    def size(self) -> int:
        return self.offsets.shape[0] - 1

    def __len__(self) -> int:
        return self.size

    def record(self, i: int) -> np.ndarray:
        return self.tokens[self.offsets[i]:self.offsets[i + 1]]

    @property
    def records(self) -> list[np.ndarray]:
        return [self.record(i) for i in range(self.size)]

    @property
    def n_tokens(self) -> int:
        """Scored tokens, i.e. stored tokens plus one EOS per record."""
        return int(self.tokens.shape[0]) + self.size

    def lines(self) -> list[str]:
        return [self.vocab.decode(r) for r in self.records]

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class CorpusSet:
    corpora: tuple[Corpus, ...]
    validation: Corpus

    def __post_init__(self):
        if not self.corpora:
            raise CorpusError("at least one training corpus is required")
        vocab = self.corpora[0].vocab
        if any(c.vocab != vocab for c in self.corpora) or self.validation.vocab != vocab:
            raise CorpusError("all corpora must share one vocabulary")

    @property
    def k(self) -> int:
        return len(self.corpora)

    @property
    def vocab(self) -> Vocab:
        return self.corpora[0].vocab

    @property
    def total_records(self) -> int:
        return sum(c.size for c in self.corpora)


def tokenize_lines(lines: Iterable[str], vocab: Vocab, name: str = "corpus") -> Corpus:
    records = [vocab.encode(ln) for ln in lines if ln.strip()]
    if not records:
        raise CorpusError(f"corpus {name!r} has no non-blank lines")
    return Corpus.from_records(name, vocab, records)


def load_corpus(path, vocab: Vocab, name: str | None = None) -> Corpus:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        return tokenize_lines(fh, vocab, name or path.stem)


# ---------------------------------------------------------------------------
# synthetic first-order Markov sources
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarkovSpec:
    """A first-order Markov text source.

    ``transitions[i, j]`` is P(next = states[j] | current = states[i]);
    ``initial`` is the distribution of the first token (uniform if omitted).
    Record lengths are uniform on ``[min_len, max_len]``.
    """

    states: tuple[str, ...]
    transitions: np.ndarray
    initial: np.ndarray | None = None
    min_len: int = 5
    max_len: int = 15
    name: str = "markov"
    _checked: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        k = len(self.states)
        trans = np.asarray(self.transitions, dtype=np.float64)
        object.__setattr__(self, "transitions", trans)
        if k == 0 or trans.shape != (k, k):
            raise CorpusError(f"transition matrix must be {k}x{k}, got {trans.shape}")
        if len(set(self.states)) != k or any(s in RESERVED for s in self.states):
            raise CorpusError("states must be unique and must not use reserved tokens")
        _check_rows(trans, "transition")
        init = np.full(k, 1.0 / k) if self.initial is None else np.asarray(self.initial, dtype=np.float64)
        if init.shape != (k,):
            raise CorpusError("initial distribution has the wrong length")
        _check_rows(init[None, :], "initial")
        object.__setattr__(self, "initial", init)
        if not 1 <= self.min_len <= self.max_len:
            raise CorpusError("need 1 <= min_len <= max_len")

    @classmethod
    def from_dict(cls, d: dict) -> "MarkovSpec":
        try:
            return cls(
                states=tuple(str(s) for s in d["states"]),
                transitions=np.asarray(d["transitions"], dtype=np.float64),
                initial=None if d.get("initial") is None else np.asarray(d["initial"], dtype=np.float64),
                min_len=int(d.get("min_len", 5)),
                max_len=int(d.get("max_len", 15)),
                name=str(d.get("name", "markov")),
            )
        except KeyError as exc:
            raise CorpusError(f"markov spec is missing field {exc.args[0]!r}") from None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "states": list(self.states),
            "initial": self.initial.tolist(),
            "min_len": self.min_len,
            "max_len": self.max_len,
            "transitions": self.transitions.tolist(),
        }

    @classmethod
    def load(cls, path) -> "MarkovSpec":
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict):
            raise CorpusError(f"{path}: markov spec must be a mapping")
        return cls.from_dict(data)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)

    def vocab(self) -> Vocab:
        return Vocab(list(RESERVED) + list(self.states))

    def entropy_per_token(self) -> float:
        """Exact entropy of the source per scored token (EOS included), in nats.

        The record entropy is H(length) + H(first token) + the summed
        conditional entropies along the chain, using the exact marginal at
        each step; dividing by E[length + 1] gives the floor that any model's
        expected per-token cross-entropy must respect.
        """
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(self.transitions > 0, self.transitions * np.log(self.transitions), 0.0)
            init_h = -np.where(self.initial > 0, self.initial * np.log(self.initial), 0.0).sum()
        row_h = -plogp.sum(axis=1)
        lengths = np.arange(self.min_len, self.max_len + 1)
        p_len = 1.0 / lengths.shape[0]
        # cumulative conditional entropy after t transitions
        cum = np.zeros(self.max_len)
        marginal = self.initial.copy()
        for t in range(1, self.max_len):
            cum[t] = cum[t - 1] + marginal @ row_h
            marginal = marginal @ self.transitions
        record_h = math.log(lengths.shape[0]) + init_h + p_len * cum[lengths - 1].sum()
        return record_h / (lengths.mean() + 1.0)


def _check_rows(rows: np.ndarray, what: str) -> None:
    if (rows < 0).any() or not np.isfinite(rows).all():
        raise CorpusError(f"{what} probabilities must be finite and non-negative")
    bad = np.flatnonzero(np.abs(rows.sum(axis=1) - 1.0) > 1e-9)
    if bad.size:
        raise CorpusError(f"{what} row {int(bad[0])} does not sum to 1 (sum={rows[bad[0]].sum()!r})")


def generate_synthetic(spec: MarkovSpec, n_records: int, seed: int,
                       vocab: Vocab | None = None, name: str | None = None) -> Corpus:
    """Sample ``n_records`` i.i.d. records from ``spec``; a pure function of its arguments."""
    if n_records < 1:
        raise CorpusError("n_records must be >= 1")
    vocab = vocab or spec.vocab()
    state_ids = np.array([vocab.id(s) for s in spec.states], dtype=np.int32)
    if (state_ids == vocab.unk_id).any():
        raise CorpusError("vocabulary does not cover every Markov state")
    rng = np.random.default_rng(seed)
    k = len(spec.states)
    cdf = np.cumsum(spec.transitions, axis=1)
    cdf[:, -1] = 1.0
    init_cdf = np.cumsum(spec.initial)
    init_cdf[-1] = 1.0
    lengths = rng.integers(spec.min_len, spec.max_len + 1, size=n_records)
    u = rng.random((n_records, spec.max_len))
    # all records advance in lockstep; positions past a record's length are dropped below
    states = np.empty((n_records, spec.max_len), dtype=np.int64)
    states[:, 0] = np.minimum(np.searchsorted(init_cdf, u[:, 0], side="right"), k - 1)
    for t in range(1, spec.max_len):
        rows = cdf[states[:, t - 1]]
        states[:, t] = np.minimum((rows <= u[:, t, None]).sum(axis=1), k - 1)
    keep = np.arange(spec.max_len)[None, :] < lengths[:, None]
    offsets = np.zeros(n_records + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    return Corpus(name or spec.name, vocab, state_ids[states[keep]], offsets)
