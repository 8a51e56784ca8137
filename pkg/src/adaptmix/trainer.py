"""Multi-corpora training loops: static mixtures and the adaptive schedule.

The adaptive schedule re-estimates the corpus sampling weights before every
epoch (or every ``reweight_interval`` iterations):

1. fine-tune a throwaway clone of the current model on each corpus alone
   for ``finetune_iters`` steps;
2. score the target validation set with the K clones and optimize the
   mixture weights of those K models;
3. train the *current* model (not the clones) on minibatches drawn from the
   corpora with those weights.

Static strategies skip steps 1-2 and use one weight vector throughout.
All randomness is derived from ``TrainConfig.seed`` through
``numpy.random.SeedSequence`` keyed by (purpose, epoch, chunk, corpus), so
runs are bit-reproducible and parallel fine-tunes do not share streams.
"""
from __future__ import annotations

import csv
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nnlm
from .corpus import Corpus, CorpusSet
from .eval_report import evaluate_ppl
from .ngram import fit_ngram
from .nnlm import DivergenceError, ModelConfig, ModelSnapshot
from .sampler import MixtureSampler, check_weights, epoch_iterations, uniform_weights
from .weight_opt import optimize_weights_em, optimize_weights_gd, score_matrix

log = logging.getLogger(__name__)

STRATEGIES = ("uniform", "ngram_opt", "adaptive", "static")
WORKERS_ENV = "ADAPTMIX_WORKERS"
_TRAIN, _FINETUNE = 0, 1


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 32
    base_lr: float = 0.1
    lr_decay: float = 0.7
    finetune_iters: int | None = None
    finetune_lr: float | None = None
    reweight_interval: int | None = None
    strategy: str = "adaptive"
    static_weights: Sequence[float] | None = None
    seed: int = 0
    workers: int | None = None
    wo_method: str = "gradient"
    ngram_order: int = 3
    ngram_k: float = 0.1
    finetune_reset_optimizer: bool = True
    record_wall_time: bool = True

    def __post_init__(self):
        self.strategy = self.strategy.replace("-", "_")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {', '.join(STRATEGIES)}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.base_lr > 0 or (self.finetune_lr is not None and not self.finetune_lr > 0):
            raise ValueError("learning rates must be > 0")
        if not self.lr_decay > 0:
            raise ValueError("lr_decay must be > 0")
        if self.finetune_iters is not None and self.finetune_iters < 0:
            raise ValueError("finetune_iters must be >= 0")
        if self.reweight_interval is not None and self.reweight_interval < 1:
            raise ValueError("reweight_interval must be >= 1")
        if self.wo_method not in ("gradient", "em"):
            raise ValueError(f"unknown wo_method {self.wo_method!r}")
        if self.strategy == "static":
            if self.static_weights is None:
                raise ValueError("static strategy requires static_weights")
            self.static_weights = tuple(float(x) for x in check_weights(self.static_weights))

    def lr_at(self, epoch: int) -> float:
        return self.base_lr * self.lr_decay ** (epoch - 1)


@dataclass
class EpochRecord:
    epoch: int
    weights: np.ndarray
    train_loss: float
    validation_nll: float
    validation_ppl: float
    wall_time: float


@dataclass
class TrainReport:
    strategy: str
    corpus_names: list[str]
    epochs: list[EpochRecord] = field(default_factory=list)
    weight_updates: list[tuple[int, int, np.ndarray]] = field(default_factory=list)
    train_steps: int = 0
    finetune_steps: int = 0
    error: str | None = None

    @property
    def k(self) -> int:
        return len(self.corpus_names)

    def weights_matrix(self) -> np.ndarray:
        return np.array([r.weights for r in self.epochs]).reshape(-1, self.k)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", *(f"w_{k + 1}" for k in range(self.k)),
                        "train_loss", "val_nll", "val_ppl", "wall_time"])
            for r in self.epochs:
                w.writerow([r.epoch, *(repr(float(x)) for x in r.weights), repr(r.train_loss),
                            repr(r.validation_nll), repr(r.validation_ppl), f"{r.wall_time:.6f}"])


class TrainingDiverged(DivergenceError):
    """Divergence during a run; carries the partial report and last good model."""

    def __init__(self, msg: str, report: TrainReport, model: ModelSnapshot):
        super().__init__(msg)
        self.report = report
        self.model = model


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def resolve_workers(requested: int | None = None) -> int:
    """Worker count for parallel fine-tuning; ``ADAPTMIX_WORKERS`` caps it."""
    env = os.environ.get(WORKERS_ENV, "").strip()
    cap = int(env) if env else None
    n = requested if requested is not None else (cap or 1)
    if cap is not None:
        n = min(n, cap)
    return max(1, int(n))


def default_finetune_iters(corpora: Sequence[Corpus], batch_size: int) -> int:
    """One pass over the smallest corpus, capped at 200 iterations."""
    smallest = min(c.size for c in corpora)
    return min(-(-smallest // batch_size), 200)


def _run_steps(model: ModelSnapshot, sampler: MixtureSampler, iters: int, lr: float,
               batch_size: int) -> tuple[float, int]:
    """``iters`` training steps; returns (summed token NLL, token count)."""
    total, tokens = 0.0, 0
    for _ in range(iters):
        batch = [rec for _, rec in sampler.sample_minibatch(batch_size)]
        stats = nnlm.train_step(model, batch, lr)
        total += stats.loss * stats.tokens
        tokens += stats.tokens
    return total, tokens


def fine_tune(model: ModelSnapshot, corpus: Corpus, iters: int, lr: float, seed,
              batch_size: int = 32, reset_optimizer: bool = True) -> ModelSnapshot:
    """Train a clone of ``model`` on ``corpus`` alone for ``iters`` steps.

    The input is never modified. By default the clone starts with fresh
    optimizer accumulators; ``reset_optimizer=False`` continues from the
    model's own accumulators instead.
    """
    if iters < 0:
        raise ValueError("iters must be >= 0")
    clone = model.clone(reset_optimizer=reset_optimizer)
    if iters:
        _run_steps(clone, MixtureSampler([corpus], [1.0], seed), iters, lr, batch_size)
    return clone


def train_epoch(model: ModelSnapshot, sampler: MixtureSampler, iters: int, lr: float,
                batch_size: int = 32) -> float:
    """Train in place for ``iters`` minibatches; returns mean per-token NLL."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    total, tokens = _run_steps(model, sampler, iters, lr, batch_size)
    return total / tokens


def compute_static_weights(strategy: str, corpus_set: CorpusSet, cfg: TrainConfig | None = None) -> np.ndarray:
    cfg = cfg or TrainConfig(strategy="uniform")
    strategy = strategy.replace("-", "_")
    if strategy == "uniform":
        return uniform_weights(corpus_set.k)
    if strategy == "static":
        return check_weights(cfg.static_weights, corpus_set.k)
    if strategy == "ngram_opt":
        models = [fit_ngram(c, cfg.ngram_order, cfg.ngram_k) for c in corpus_set.corpora]
        return optimize_weights_gd(score_matrix(models, corpus_set.validation)).weights
    raise ValueError(f"strategy {strategy!r} has no static weights")


def _optimize(cfg: TrainConfig, m):
    if cfg.wo_method == "em":
        return optimize_weights_em(m)
    return optimize_weights_gd(m)


def adaptive_weights(model: ModelSnapshot, corpus_set: CorpusSet, cfg: TrainConfig, iters: int,
                     lr: float, epoch: int, chunk: int, workers: int = 1) -> tuple[np.ndarray, list[ModelSnapshot]]:
    """Fine-tune a probe per corpus, then optimize their interpolation weights on validation."""
    if corpus_set.k == 1:
        probes = [fine_tune(model, corpus_set.corpora[0], iters, lr,
                            _rng(cfg.seed, _FINETUNE, epoch, chunk, 0), cfg.batch_size,
                            cfg.finetune_reset_optimizer)]
        return np.ones(1), probes

    def probe(k):
        return fine_tune(model, corpus_set.corpora[k], iters, lr,
                         _rng(cfg.seed, _FINETUNE, epoch, chunk, k), cfg.batch_size,
                         cfg.finetune_reset_optimizer)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=min(workers, corpus_set.k)) as pool:
            probes = list(pool.map(probe, range(corpus_set.k)))
    else:
        probes = [probe(k) for k in range(corpus_set.k)]
    m = score_matrix(probes, corpus_set.validation, workers=workers)
    return _optimize(cfg, m).weights, probes


def _chunks(total: int, interval: int | None) -> list[int]:
    if interval is None or interval >= total:
        return [total]
    return [min(interval, total - s) for s in range(0, total, interval)]


def _train(corpus_set: CorpusSet, model_cfg: ModelConfig, cfg: TrainConfig,
           weights_for: Callable, model: ModelSnapshot | None,
           on_epoch: Callable | None) -> tuple[ModelSnapshot, TrainReport]:
    model = model if model is not None else nnlm.init_model(model_cfg)
    report = TrainReport(cfg.strategy, [c.name for c in corpus_set.corpora])
    iters = epoch_iterations(corpus_set.corpora, cfg.batch_size)
    last_good = model.clone()
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        lr = cfg.lr_at(epoch)
        rng = _rng(cfg.seed, _TRAIN, epoch)
        total = tokens = 0.0
        try:
            for j, n in enumerate(_chunks(iters, cfg.reweight_interval)):
                w = weights_for(model, epoch, j, lr, report)
                report.weight_updates.append((epoch, j * (cfg.reweight_interval or iters), w))
                sampler = MixtureSampler(corpus_set.corpora, w, rng)
                s, t = _run_steps(model, sampler, n, lr, cfg.batch_size)
                report.train_steps += n
                total += s
                tokens += t
            ev = evaluate_ppl(model, corpus_set.validation)
        except DivergenceError as exc:
            report.error = f"epoch {epoch}: {exc}"
            raise TrainingDiverged(report.error, report, last_good) from exc
        wall = time.perf_counter() - t0 if cfg.record_wall_time else 0.0
        rec = EpochRecord(epoch, sampler.weights.copy(), total / tokens, ev.nll_per_token, ev.ppl, wall)
        report.epochs.append(rec)
        log.info("epoch %d  lr=%.4g  w=%s  train=%.4f  val_ppl=%.3f", epoch, lr,
                 np.array2string(rec.weights, precision=3), rec.train_loss, rec.validation_ppl)
        last_good = model.clone()
        if on_epoch is not None:
            on_epoch(epoch, model, rec)
    return model, report


def adaptive_train(corpus_set: CorpusSet, model_cfg: ModelConfig, cfg: TrainConfig,
                   model: ModelSnapshot | None = None,
                   on_epoch: Callable | None = None) -> tuple[ModelSnapshot, TrainReport]:
    if cfg.strategy != "adaptive":
        raise ValueError("adaptive_train needs strategy='adaptive'")
    s = cfg.finetune_iters if cfg.finetune_iters is not None else default_finetune_iters(corpus_set.corpora, cfg.batch_size)
    workers = resolve_workers(cfg.workers)

    def weights_for(model, epoch, chunk, lr, report):
        ft_lr = cfg.finetune_lr if cfg.finetune_lr is not None else lr
        w, _ = adaptive_weights(model, corpus_set, cfg, s, ft_lr, epoch, chunk, workers)
        report.finetune_steps += s * corpus_set.k
        return w

    return _train(corpus_set, model_cfg, cfg, weights_for, model, on_epoch)


def static_train(corpus_set: CorpusSet, model_cfg: ModelConfig, cfg: TrainConfig,
                 model: ModelSnapshot | None = None,
                 on_epoch: Callable | None = None) -> tuple[ModelSnapshot, TrainReport]:
    if cfg.strategy == "adaptive":
        raise ValueError("static_train cannot run the adaptive strategy")
    w = compute_static_weights(cfg.strategy, corpus_set, cfg)
    return _train(corpus_set, model_cfg, cfg, lambda *_: w, model, on_epoch)


def train(corpus_set: CorpusSet, model_cfg: ModelConfig, cfg: TrainConfig, **kw):
    fn = adaptive_train if cfg.strategy == "adaptive" else static_train
    return fn(corpus_set, model_cfg, cfg, **kw)


def expected_extra_steps(k: int, s: int, epochs: int, reweights_per_epoch: int = 1) -> int:
    """Train-step overhead of the adaptive schedule over a static run: K * S * T (per reweight)."""
    return k * s * epochs * reweights_per_epoch

