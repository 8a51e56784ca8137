import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import two_model_optimum

from adaptmix import nnlm
from adaptmix.corpus import Corpus, Vocab
from adaptmix.nnlm import ModelConfig
from adaptmix.weight_opt import (LogProbMatrix, WeightOptError, lattice_points, mixture_nll,
                                 optimize_weights_em, optimize_weights_gd, optimize_weights_grid,
                                 project_simplex, score_matrix)

HAND = np.log([[0.9, 0.3], [0.1, 0.5]])


def random_matrix(rng, n, k):
    lengths = rng.integers(1, 12, size=(n, 1))
    return -lengths * rng.uniform(1.0, 3.0, size=(n, k))


def test_hand_instance_closed_form():
    assert two_model_optimum((0.9, 0.1), (0.3, 0.5)) == pytest.approx(0.375, abs=1e-15)


@pytest.mark.parametrize("method", ["gd", "gd_softmax", "em", "grid"])
def test_hand_instance_all_methods(method):
    fn = {"gd": optimize_weights_gd, "em": optimize_weights_em, "grid": optimize_weights_grid,
          "gd_softmax": lambda m: optimize_weights_gd(m, parameterization="softmax")}[method]
    assert fn(HAND).weights[0] == pytest.approx(0.375, abs=1e-3)


def test_grid_hits_exact_lattice_point():
    r = optimize_weights_grid(HAND)
    assert r.weights[0] == pytest.approx(0.375, abs=1e-12)
    assert r.method == "grid"


def test_single_model_is_trivial():
    m = np.array([[-3.0], [-1.5]])
    for fn in (optimize_weights_gd, optimize_weights_em, optimize_weights_grid):
        r = fn(m)
        assert r.weights.tolist() == [1.0]


def test_identical_columns_keep_init():
    col = np.array([[-2.0], [-5.0], [-0.5]])
    m = np.hstack([col, col, col])
    init = [0.2, 0.3, 0.5]
    for fn in (optimize_weights_gd, optimize_weights_em):
        np.testing.assert_allclose(fn(m, init=init).weights, init, atol=1e-6)


def test_grid_constant_objective_tie_break():
    m = np.full((4, 3), -2.0)
    np.testing.assert_array_equal(optimize_weights_grid(m, 0.1).weights, [0.0, 0.0, 1.0])


def test_lattice_k2_half_step():
    np.testing.assert_array_equal(lattice_points(2, 0.5), [[0.0, 1.0], [0.5, 0.5], [1.0, 0.0]])


def test_lattice_is_lexicographic_and_complete():
    pts = lattice_points(3, 0.1)
    assert len(pts) == 66
    assert [tuple(p) for p in pts] == sorted(tuple(p) for p in pts)
    np.testing.assert_allclose(pts.sum(axis=1), 1.0)


def test_grid_equals_brute_force_over_lattice():
    rng = np.random.default_rng(2)
    m = random_matrix(rng, 12, 3)
    pts = lattice_points(3, 0.05)
    with np.errstate(divide="ignore"):
        vals = [mixture_nll(m, p) for p in pts]
    r = optimize_weights_grid(m, 0.05)
    np.testing.assert_allclose(r.weights, pts[int(np.argmin(vals))], atol=1e-12)
    assert r.final_nll == pytest.approx(min(vals), rel=1e-12)


def test_grid_limits():
    with pytest.raises(WeightOptError):
        optimize_weights_grid(np.zeros((2, 4)) - 1)
    with pytest.raises(WeightOptError):
        optimize_weights_grid(HAND, step=0.3)


def test_em_single_step_by_hand():
    r = optimize_weights_em(np.log([[0.8, 0.2]]), init=[0.5, 0.5], max_iters=1)
    np.testing.assert_allclose(r.weights, [0.8, 0.2], atol=1e-12)


def test_em_rejects_zero_init():
    with pytest.raises(WeightOptError):
        optimize_weights_em(HAND, init=[1.0, 0.0])


def test_em_fixed_point():
    best = optimize_weights_em(HAND, max_iters=5000, tol=1e-14).weights
    r = optimize_weights_em(HAND, init=best, tol=1e-6)
    assert np.abs(r.weights - best).max() < 1e-6


def test_gd_and_em_agree_on_hand_instance():
    assert abs(optimize_weights_gd(HAND).weights[0] - optimize_weights_em(HAND).weights[0]) < 1e-3


@given(st.integers(0, 2**32 - 1), st.integers(2, 4), st.integers(1, 30))
@settings(max_examples=60, deadline=None)
def test_descent_monotonicity_and_simplex(seed, k, n):
    rng = np.random.default_rng(seed)
    m = random_matrix(rng, n, k)
    init = rng.dirichlet(np.ones(k))
    init_nll = mixture_nll(m, init)
    for fn in (optimize_weights_gd, optimize_weights_em):
        r = fn(m, init=init)
        assert np.all(r.weights >= 0) and r.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert r.final_nll <= init_nll + 1e-9
        assert r.final_nll == pytest.approx(mixture_nll(m, r.weights), rel=1e-9, abs=1e-9)
    hist = optimize_weights_em(m, init=init).history
    assert all(b <= a + 1e-9 * abs(a) for a, b in zip(hist, hist[1:]))


@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
@settings(max_examples=30, deadline=None)
def test_constant_shift_invariance(seed, c):
    rng = np.random.default_rng(seed)
    m = random_matrix(rng, 10, 3)
    c = min(c, -m.max())  # keep entries <= 0
    shifted = m + c
    assert mixture_nll(shifted, [0.2, 0.3, 0.5]) == pytest.approx(mixture_nll(m, [0.2, 0.3, 0.5]) - 10 * c,
                                                                   rel=1e-10, abs=1e-8)
    np.testing.assert_array_equal(optimize_weights_grid(m, 0.01).weights,
                                  optimize_weights_grid(shifted, 0.01).weights)
    np.testing.assert_allclose(optimize_weights_em(m).weights, optimize_weights_em(shifted).weights, atol=1e-9)


def test_long_sentences_do_not_underflow():
    m = np.array([[-2000.0, -2001.0], [-3000.0, -2990.0]])
    r = optimize_weights_em(m)
    assert np.isfinite(r.final_nll)
    assert np.all(np.isfinite(r.weights))


def test_log_prob_matrix_validation(tmp_path):
    with pytest.raises(WeightOptError):
        LogProbMatrix([[0.5, -1.0]])
    with pytest.raises(WeightOptError):
        LogProbMatrix([[-np.inf, -1.0]])
    lp = LogProbMatrix([[-1.0, -2.0], [-0.5, -0.25]])
    lp.to_csv(tmp_path / "m.csv", ["a", "b"])
    assert (tmp_path / "m.csv").read_text().splitlines() == ["record,a,b", "0,-1.0,-2.0", "1,-0.5,-0.25"]


def test_project_simplex_properties():
    rng = np.random.default_rng(0)
    for _ in range(50):
        v = rng.normal(0, 2, 5)
        p = project_simplex(v)
        assert np.all(p >= 0) and p.sum() == pytest.approx(1.0)
        q = rng.dirichlet(np.ones(5))
        # projection is closer than any other feasible point
        assert np.linalg.norm(v - p) <= np.linalg.norm(v - q) + 1e-12


def test_score_matrix_shapes_and_values():
    vocab = Vocab(["a", "b", "c"])
    valid = Corpus.from_records("v", vocab, [[3, 4], [5], [3, 3, 4, 5]])
    zero = nnlm.init_model(ModelConfig(vocab_size=len(vocab)), scale=0.0)
    one = score_matrix([zero], valid)
    assert one.shape == (3, 1)
    np.testing.assert_allclose(one.values[:, 0], [-3 * math.log(6), -2 * math.log(6), -5 * math.log(6)])
    other = nnlm.init_model(ModelConfig(vocab_size=len(vocab), seed=3))
    two = score_matrix([other, other], valid, workers=2)
    np.testing.assert_array_equal(two.values[:, 0], two.values[:, 1])


def test_gd_unknown_parameterization():
    with pytest.raises(WeightOptError):
        optimize_weights_gd(HAND, parameterization="polar")
