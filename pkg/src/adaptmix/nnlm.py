"""Feed-forward n-gram neural language model with hand-written backprop.

Architecture: the ``context_size`` previous tokens (BOS-padded) are embedded,
concatenated, passed through one tanh layer and a softmax over the vocab.
All parameters live in one flat float64 vector so snapshots, checksums and
checkpoints are trivial; the named arrays are views into it.

Checkpoint layout (all integers little-endian)::

    bytes 0-7    magic  b"ADMXLM01"
    bytes 8-11   uint32 header length H
    next H       UTF-8 JSON header (sorted keys): format, config, n_params,
                 step_count, crc32 of the payload bytes, and optionally
                 vocab (token list) and meta (free-form run info)
    next 8*P     float64 LE parameter vector (layout below)
    next 8*P     float64 LE optimizer accumulator vector

Parameter layout, in order: embedding (V, d), hidden weights (n*d, H),
hidden bias (H,), output weights (H, V), output bias (V,), all row-major.
"""
from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels as K
from .corpus import Corpus, Vocab

CLIP_NORM = 5.0
ACC_INIT = 0.1
ACC_EPS = 1e-10
_MAGIC = b"ADMXLM01"
_SCORE_CHUNK = 8192  # tokens per forward pass when scoring


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    context_size: int = 3
    embed_dim: int = 32
    hidden_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        for f in ("vocab_size", "context_size", "embed_dim", "hidden_dim"):
            if int(getattr(self, f)) < 1:
                raise ValueError(f"{f} must be >= 1")

    @property
    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        v, n, d, h = self.vocab_size, self.context_size, self.embed_dim, self.hidden_dim
        return [("emb", (v, d)), ("w1", (n * d, h)), ("b1", (h,)), ("w2", (h, v)), ("b2", (v,))]

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.shapes)


class ModelSnapshot:
    """Full trainable state: parameters, optimizer accumulators, step count."""

    def __init__(self, config: ModelConfig, params: np.ndarray, opt_state: np.ndarray | None = None,
                 step_count: int = 0):
        if params.shape != (config.n_params,):
            raise ValueError(f"expected {config.n_params} parameters, got {params.shape}")
        self.config = config
        self.params = np.ascontiguousarray(params, dtype=np.float64)
        self.opt_state = (np.full_like(self.params, ACC_INIT) if opt_state is None
                          else np.ascontiguousarray(opt_state, dtype=np.float64))
        self.step_count = int(step_count)
        self._bind()

    def _bind(self):
        self.views = _split(self.params, self.config)

    @property
    def emb(self):
        return self.views["emb"]

    @property
    def w1(self):
        return self.views["w1"]

    @property
    def b1(self):
        return self.views["b1"]

    @property
    def w2(self):
        return self.views["w2"]

    @property
    def b2(self):
        return self.views["b2"]

    def clone(self, reset_optimizer: bool = False) -> "ModelSnapshot":
        opt = None if reset_optimizer else self.opt_state.copy()
        return ModelSnapshot(self.config, self.params.copy(), opt, self.step_count)

    def digest(self) -> str:
        return hashlib.sha256(self.params.tobytes()).hexdigest()

    def log_prob_records(self, records) -> np.ndarray:
        return log_prob_records(self, records)

    def __repr__(self) -> str:
        c = self.config
        return (f"ModelSnapshot(V={c.vocab_size}, n={c.context_size}, d={c.embed_dim}, "
                f"h={c.hidden_dim}, steps={self.step_count})")


def _split(flat: np.ndarray, config: ModelConfig) -> dict[str, np.ndarray]:
    out, pos = {}, 0
    for name, shape in config.shapes:
        size = int(np.prod(shape))
        out[name] = flat[pos:pos + size].reshape(shape)
        pos += size
    return out


def init_model(config: ModelConfig, scale: float = 1.0) -> ModelSnapshot:
    """Weights ~ U(-1, 1) / sqrt(fan_in), biases zero. ``scale=0`` gives the all-zero model."""
    rng = np.random.default_rng(config.seed)
    params = np.zeros(config.n_params)
    views = _split(params, config)
    fan_in = {"emb": config.embed_dim, "w1": config.context_size * config.embed_dim,
              "w2": config.hidden_dim}
    for name, shape in config.shapes:
        if name in fan_in:
            views[name][...] = rng.uniform(-1.0, 1.0, size=shape) * (scale / np.sqrt(fan_in[name]))
    return ModelSnapshot(config, params)


def clone_snapshot(model: ModelSnapshot) -> ModelSnapshot:
    return model.clone()


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _as_records(records) -> list[np.ndarray]:
    if isinstance(records, Corpus):
        return records.records
    return [np.asarray(r) for r in records]


def _pack(records: Sequence[np.ndarray], vocab_size: int) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([r.shape[0] for r in records], dtype=np.int64)
    if (lengths < 1).any():
        raise ValueError("records must be non-empty")
    offsets = np.zeros(len(records) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    tokens = np.concatenate(records).astype(np.int64)
    if tokens.min() < 0 or tokens.max() >= vocab_size:
        raise ValueError(f"token id out of range for vocabulary of size {vocab_size}")
    return tokens, offsets


def _contexts(model: ModelSnapshot, records: Sequence[np.ndarray]):
    tokens, offsets = _pack(records, model.config.vocab_size)
    return K.build_contexts(tokens, offsets, model.config.context_size, Vocab.bos_id, Vocab.eos_id)


def _forward(model: ModelSnapshot, ctx: np.ndarray):
    x = model.emb[ctx].reshape(ctx.shape[0], -1)
    h = np.tanh(x @ model.w1 + model.b1)
    logits = h @ model.w2 + model.b2
    return x, h, logits


def loss_and_grad(model: ModelSnapshot, batch) -> tuple[float, np.ndarray, int]:
    """Mean per-token NLL of ``batch`` and its gradient (flat, unclipped)."""
    records = _as_records(batch)
    if not records:
        raise ValueError("batch must be non-empty")
    ctx, targets, _ = _contexts(model, records)
    n_tok = targets.shape[0]
    x, h, logits = _forward(model, ctx)
    nll = K.softmax_xent(logits, targets)
    loss = float(nll.sum() / n_tok)
    dlogits = logits
    dlogits /= n_tok

    grad = np.zeros_like(model.params)
    g = _split(grad, model.config)
    np.matmul(h.T, dlogits, out=g["w2"])
    g["b2"][...] = dlogits.sum(axis=0)
    dpre = dlogits @ model.w2.T
    dpre *= 1.0 - h * h
    np.matmul(x.T, dpre, out=g["w1"])
    g["b1"][...] = dpre.sum(axis=0)
    dx = dpre @ model.w1.T
    K.scatter_add_rows(g["emb"], ctx.reshape(-1), dx.reshape(-1, model.config.embed_dim))
    return loss, grad, n_tok


@dataclass(frozen=True)
class TrainStepStats:
    loss: float
    tokens: int
    grad_norm: float


def train_step(model: ModelSnapshot, batch, lr: float, clip: float = CLIP_NORM) -> TrainStepStats:
    """One clipped Adagrad step on the batch's mean per-token NLL; returns the pre-update loss."""
    if not lr >= 0 or not np.isfinite(lr):
        raise ValueError(f"learning rate must be a non-negative finite number, got {lr!r}")
    loss, grad, n_tok = loss_and_grad(model, batch)
    norm = float(np.sqrt(grad @ grad))
    if not (np.isfinite(loss) and np.isfinite(norm)):
        raise DivergenceError(f"non-finite loss at step {model.step_count}: {loss!r}")
    if clip and norm > clip:
        grad *= clip / norm
    model.opt_state += grad * grad
    model.params -= lr * grad / (np.sqrt(model.opt_state) + ACC_EPS)
    model.step_count += 1
    return TrainStepStats(loss, n_tok, norm)


def log_prob_records(model: ModelSnapshot, records) -> np.ndarray:
    """Sentence log-probabilities (EOS included) for each record."""
    records = _as_records(records)
    out = np.zeros(len(records))
    start = 0
    while start < len(records):
        stop, tok = start, 0
        while stop < len(records) and (tok == 0 or tok + records[stop].shape[0] + 1 <= _SCORE_CHUNK):
            tok += records[stop].shape[0] + 1
            stop += 1
        chunk = records[start:stop]
        ctx, targets, rec_of = _contexts(model, chunk)
        _, _, logits = _forward(model, ctx)
        lp = K.target_logprob(logits, targets)
        out[start:stop] = np.bincount(rec_of, weights=lp, minlength=len(chunk))
        start = stop
    return out


def log_prob_record(model: ModelSnapshot, record) -> float:
    return float(log_prob_records(model, [np.asarray(record)])[0])


def next_token_distribution(model: ModelSnapshot, context: Sequence[int]) -> np.ndarray:
    """Softmax over the vocabulary given exactly ``context_size`` history ids."""
    ctx = np.asarray(context, dtype=np.int64).reshape(1, -1)
    if ctx.shape[1] != model.config.context_size:
        raise ValueError("context length must equal context_size")
    _, _, logits = _forward(model, ctx)
    logits = logits[0] - logits[0].max()
    p = np.exp(logits)
    return p / p.sum()


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: ModelSnapshot, path, vocab: Vocab | None = None, meta: dict | None = None) -> None:
    payload = model.params.astype("<f8").tobytes() + model.opt_state.astype("<f8").tobytes()
    header = {
        "format": 1,
        "config": asdict(model.config),
        "n_params": model.config.n_params,
        "step_count": model.step_count,
        "crc32": zlib.crc32(payload),
    }
    if vocab is not None:
        if len(vocab) != model.config.vocab_size:
            raise ValueError("vocabulary size does not match the model")
        header["vocab"] = list(vocab.tokens)
    if meta:
        header["meta"] = meta
    header = json.dumps(header, sort_keys=True).encode("utf-8")
    Path(path).write_bytes(_MAGIC + struct.pack("<I", len(header)) + header + payload)


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:8] != _MAGIC:
            raise CheckpointError(f"{path}: not an adaptmix checkpoint")
        (hlen,) = struct.unpack("<I", head[8:12])
        try:
            return json.loads(fh.read(hlen).decode("utf-8"))
        except ValueError as exc:
            raise CheckpointError(f"{path}: corrupt header ({exc})") from None


def load_checkpoint(path) -> ModelSnapshot:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:8] != _MAGIC:
        raise CheckpointError(f"{path}: not an adaptmix checkpoint")
    (hlen,) = struct.unpack("<I", data[8:12])
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
        config = ModelConfig(**header["config"])
        n = int(header["n_params"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    payload = data[12 + hlen:]
    if n != config.n_params or len(payload) != 16 * n:
        raise CheckpointError(f"{path}: payload size does not match header")
    if zlib.crc32(payload) != header.get("crc32"):
        raise CheckpointError(f"{path}: checksum mismatch")
    params = np.frombuffer(payload[:8 * n], dtype="<f8").astype(np.float64)
    opt = np.frombuffer(payload[8 * n:], dtype="<f8").astype(np.float64)
    if not (np.isfinite(params).all() and np.isfinite(opt).all()):
        raise CheckpointError(f"{path}: non-finite values")
    return ModelSnapshot(config, params, opt, header.get("step_count", 0))

