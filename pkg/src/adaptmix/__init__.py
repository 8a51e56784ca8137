"""Adaptive multi-corpora language-model training."""
from .corpus import (Corpus, CorpusError, CorpusSet, MarkovSpec, Vocab, build_vocab, generate_synthetic,
                     load_corpus)
from .eval_report import EvalResult, emit_report, evaluate_ppl
from .ngram import NgramModel, fit_ngram, ngram_log_prob
from .nnlm import (CheckpointError, DivergenceError, ModelConfig, ModelSnapshot, clone_snapshot, init_model,
                   load_checkpoint, log_prob_record, save_checkpoint, train_step)
from .sampler import MixtureSampler, WeightsError, epoch_iterations
from .trainer import (EpochRecord, TrainConfig, TrainingDiverged, TrainReport, adaptive_train,
                      compute_static_weights, fine_tune, static_train, train, train_epoch)
from .weight_opt import (LogProbMatrix, WeightOptError, WeightOptResult, optimize_weights_em,
                         optimize_weights_gd, optimize_weights_grid, score_matrix)

__version__ = "0.1.0"
