import math

import numpy as np
import pytest

from adaptmix import nnlm
from adaptmix.corpus import Corpus, Vocab, generate_synthetic
from adaptmix.eval_report import EvalResult, emit_report, evaluate_ppl, read_trajectory, write_results
from adaptmix.experiments import make_sources
from adaptmix.nnlm import ModelConfig
from adaptmix.trainer import EpochRecord, TrainConfig, TrainReport, adaptive_train


def test_zero_model_ppl_equals_vocab_size():
    vocab = Vocab([f"t{i}" for i in range(13)])
    assert len(vocab) == 16
    test = Corpus.from_records("t", vocab, [[3, 4, 5], [6], [7, 8]])
    zero = nnlm.init_model(ModelConfig(vocab_size=16), scale=0.0)
    assert evaluate_ppl(zero, test).ppl == pytest.approx(16.0, rel=1e-12)


def test_single_record_definition():
    vocab = Vocab(list("abcdef"))
    m = nnlm.init_model(ModelConfig(vocab_size=len(vocab), seed=2))
    rec = [3, 7, 5, 5]
    r = evaluate_ppl(m, Corpus.from_records("one", vocab, [rec]))
    assert r.tokens == 5
    assert r.ppl == pytest.approx(math.exp(-nnlm.log_prob_record(m, rec) / 5), rel=1e-12)
    assert r.ppl == pytest.approx(math.exp(r.nll_per_token), rel=1e-15)


def test_order_invariance():
    vocab = Vocab(list("abcdefgh"))
    rng = np.random.default_rng(1)
    recs = [rng.integers(3, 11, size=rng.integers(1, 9)) for _ in range(200)]
    m = nnlm.init_model(ModelConfig(vocab_size=len(vocab), seed=1))
    a = evaluate_ppl(m, Corpus.from_records("t", vocab, recs))
    perm = [recs[i] for i in rng.permutation(len(recs))]
    b = evaluate_ppl(m, Corpus.from_records("t", vocab, perm))
    assert a == b


def test_ppl_respects_source_entropy():
    src = make_sources(0, n_states=12, concentration=0.3)["target"]
    vocab = src.vocab()
    train = generate_synthetic(src, 1500, 1, vocab, "train")
    test = generate_synthetic(src, 1500, 2, vocab, "test")
    cs_valid = generate_synthetic(src, 50, 3, vocab, "valid")
    from adaptmix.corpus import CorpusSet

    cs = CorpusSet((train,), cs_valid)
    model, _ = adaptive_train(cs, ModelConfig(len(vocab), context_size=2, embed_dim=16, hidden_dim=32),
                              TrainConfig(epochs=3, base_lr=0.2, finetune_iters=0))
    h = src.entropy_per_token()
    lp = model.log_prob_records(test)
    nll = -lp.sum() / test.n_tokens
    # per-record log-loss sd bounds the sampling noise of the mean
    se = (-lp).std() / math.sqrt(len(lp)) / (test.n_tokens / len(lp))
    assert nll >= h - 3 * se
    assert nll < h + 0.5  # and the model learned most of the structure


def report(k=2, t=3):
    rep = TrainReport("adaptive", [f"c{i}" for i in range(k)])
    for e in range(1, t + 1):
        w = np.full(k, 1 / k)
        rep.epochs.append(EpochRecord(e, w, 3.0 / e, 2.0 / e, math.exp(2.0 / e), 0.0))
    return rep


def test_emit_report_shapes_and_determinism(tmp_path):
    ev = EvalResult("test", 1.5, math.exp(1.5), 100)
    paths = emit_report([report(k=3, t=4)], [[ev]], tmp_path / "a", ["run"])
    emit_report([report(k=3, t=4)], [[ev]], tmp_path / "b", ["run"])
    res = (tmp_path / "a" / "results.csv").read_text().splitlines()
    assert res == ["strategy,corpora,test_set,ppl", f"adaptive,c0+c1+c2,test,{math.exp(1.5)!r}"]
    rows = read_trajectory(tmp_path / "a" / "trajectory_run.csv")
    assert len(rows) == 4
    assert list(rows[0]) == ["epoch", "w_1", "w_2", "w_3", "train_loss", "val_nll", "val_ppl", "wall_time"]
    for p in paths:
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_emit_report_plot(tmp_path):
    pytest.importorskip("matplotlib")
    paths = emit_report([report(), report()], [[], []], tmp_path, plot=True)
    assert (tmp_path / "trajectories.png").stat().st_size > 0
    # duplicate run names get disambiguated
    assert {p.name for p in paths} >= {"trajectory_adaptive_0.csv", "trajectory_adaptive_1.csv"}


def test_emit_report_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        emit_report([], [], tmp_path)


def test_write_results_columns(tmp_path):
    write_results([("uniform", "a+b", EvalResult("t", 0.0, 1.0, 3))], tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text() == "strategy,corpora,test_set,ppl\nuniform,a+b,t,1.0\n"
