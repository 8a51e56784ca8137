"""Interpolation-weight optimization over a target validation set.

Given sentence log-probabilities ``m[i, k] = log P_k(y_i)`` of K models on
N validation records, find simplex weights minimizing

    NLL(w) = -sum_i log sum_k w_k P_k(y_i)

Everything is evaluated in the log domain: sentence probabilities underflow
long before the mixture does. The objective is convex in ``w``.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels as K
from .corpus import Corpus
from .sampler import check_weights, uniform_weights


class WeightOptError(ValueError):
    pass


class LogProbMatrix:
    """N x K matrix of finite, non-positive sentence log-probabilities."""

    def __init__(self, values):
        values = np.array(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise WeightOptError(f"log-prob matrix must be a non-empty 2-d array, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise WeightOptError("log-prob matrix has non-finite entries")
        if (values > 1e-9).any():
            raise WeightOptError("log-probabilities must be <= 0")
        values.setflags(write=False)
        self.values = values

    @property
    def shape(self):
        return self.values.shape

    def to_csv(self, path, names: Sequence[str] | None = None) -> None:
        names = list(names) if names else [f"model_{k + 1}" for k in range(self.shape[1])]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["record", *names])
            for i, row in enumerate(self.values):
                w.writerow([i, *(repr(float(x)) for x in row)])


@dataclass
class WeightOptResult:
    weights: np.ndarray
    final_nll: float
    iterations_used: int
    method: str
    history: list[float] = field(default_factory=list, repr=False)


def _values(m) -> np.ndarray:
    v = m.values if isinstance(m, LogProbMatrix) else np.asarray(m, dtype=np.float64)
    if v.ndim != 2 or not np.isfinite(v).all():
        raise WeightOptError("log-prob matrix must be a finite 2-d array")
    return v


def score_matrix(models: Sequence, validation: Corpus, workers: int = 1) -> LogProbMatrix:
    """Column k holds every validation record's log-probability under ``models[k]``.

    Models are anything with a ``log_prob_records(records)`` method (NNLM
    snapshots and n-gram models both qualify).
    """
    if not models:
        raise WeightOptError("need at least one model")
    records = validation.records
    if workers > 1 and len(models) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cols = list(pool.map(lambda mdl: mdl.log_prob_records(records), models))
    else:
        cols = [mdl.log_prob_records(records) for mdl in models]
    return LogProbMatrix(np.column_stack(cols))


def _row_lse(a: np.ndarray) -> np.ndarray:
    mx = a.max(axis=1)
    return mx + np.log(np.exp(a - mx[:, None]).sum(axis=1))


def mixture_nll(m, w) -> float:
    """-sum_i log sum_k w_k exp(m[i, k])."""
    v = _values(m)
    with np.errstate(divide="ignore"):
        logw = np.log(np.asarray(w, dtype=np.float64))
    return float(-_row_lse(v + logw).sum())


def responsibilities(m, w) -> np.ndarray:
    """Posterior share r[i, k] of model k for record i under weights w."""
    v = _values(m)
    with np.errstate(divide="ignore"):
        a = v + np.log(np.asarray(w, dtype=np.float64))
    return np.exp(a - _row_lse(a)[:, None])


def _finish(w, nll, iters, method, history, init_w=None, init_nll=None) -> WeightOptResult:
    if not np.isfinite(nll):
        raise WeightOptError(f"{method}: non-finite NLL")
    if init_w is not None and not nll < init_nll:
        # constant (or already optimal) objective: keep the starting point
        w, nll = init_w, init_nll
    w = np.clip(np.asarray(w, dtype=np.float64), 0.0, None)
    w = w / w.sum()
    return WeightOptResult(w, float(nll), iters, method, history)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.shape[0] + 1)
    rho = np.count_nonzero(u - css / ind > 0)
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def project_free_weights(u: np.ndarray) -> np.ndarray:
    """Projection onto {u >= 0, sum(u) <= 1}, the feasible set of w_1..w_{K-1}."""
    c = np.maximum(u, 0.0)
    return c if c.sum() <= 1.0 else project_simplex(u)


def optimize_weights_gd(m, init=None, lr: float = 0.1, max_iters: int = 500, tol: float = 1e-6,
                        parameterization: str = "substitution") -> WeightOptResult:
    """Gradient descent on the mean NLL with Armijo backtracking.

    ``parameterization="substitution"`` (default) optimizes w_1..w_{K-1}
    with w_K = 1 - sum of the rest and projects each step back onto the
    feasible set, so optima on the simplex boundary are reached exactly.
    ``"softmax"`` optimizes free logits z with w = softmax(z); iterates stay
    strictly interior, which makes boundary optima slow to approach.

    ``lr`` is the initial step; it doubles after each accepted step and halves
    on each rejected trial. Stops once the weights move less than ``tol``
    (infinity norm) or after ``max_iters`` iterations.
    """
    v = _values(m)
    n, k = v.shape
    w0 = uniform_weights(k) if init is None else check_weights(init, k)
    if k == 1:
        return WeightOptResult(np.ones(1), mixture_nll(v, [1.0]), 0, "gradient")
    init_nll = mixture_nll(v, w0)
    if parameterization == "softmax":
        w, nll, it, hist = _gd_softmax(v, w0, lr, max_iters, tol)
    elif parameterization == "substitution":
        w, nll, it, hist = _gd_substitution(v, w0, lr, max_iters, tol)
    else:
        raise WeightOptError(f"unknown parameterization {parameterization!r}")
    return _finish(w, nll, it, "gradient", hist, w0, init_nll)


def _gd_softmax(v, w0, lr, max_iters, tol):
    n = v.shape[0]
    with np.errstate(divide="ignore"):
        z = np.log(w0)
    z[~np.isfinite(z)] = -745.0  # exp underflows to 0 but stays differentiable

    def state(z):
        w = np.exp(z - z.max())
        w /= w.sum()
        a = v + np.log(np.maximum(w, 1e-300))
        lse = _row_lse(a)
        r = np.exp(a - lse[:, None])
        return w, -lse.sum() / n, w - r.mean(axis=0)

    w, f, g = state(z)
    hist = [f * n]
    step = lr
    it = 0
    for it in range(1, max_iters + 1):
        gg = g @ g
        if gg == 0.0:
            break
        while True:
            z_new = z - step * g
            w_new, f_new, g_new = state(z_new)
            if f_new <= f - 1e-4 * step * gg or step < 1e-12:
                break
            step *= 0.5
        moved = np.abs(w_new - w).max()
        if f_new > f:
            break
        z, w, f, g = z_new, w_new, f_new, g_new
        hist.append(f * n)
        step *= 2.0
        if moved < tol:
            break
    return w, f * n, it, hist


def _gd_substitution(v, w0, lr, max_iters, tol):
    n = v.shape[0]

    def state(w):
        with np.errstate(divide="ignore"):
            a = v + np.log(w)
        lse = _row_lse(a)
        # d(mean NLL)/dw_k; finite even where w_k == 0
        grad_w = -np.exp(v - lse[:, None]).mean(axis=0)
        return -lse.sum() / n, grad_w[:-1] - grad_w[-1]

    w = w0.copy()
    f, g = state(w)
    hist = [f * n]
    step = lr
    it = 0
    for it in range(1, max_iters + 1):
        while True:
            u = project_free_weights(w[:-1] - step * g)
            w_new = np.append(u, max(1.0 - u.sum(), 0.0))
            d = u - w[:-1]
            f_new, g_new = state(w_new)
            if f_new <= f + g @ d + (d @ d) / (2 * step) or step < 1e-14:
                break
            step *= 0.5
        moved = np.abs(w_new - w).max()
        if f_new > f:
            break
        w, f, g = w_new, f_new, g_new
        hist.append(f * n)
        step *= 2.0
        if moved < tol:
            break
    return w, f * n, it, hist


def optimize_weights_em(m, init=None, max_iters: int = 500, tol: float = 1e-6) -> WeightOptResult:
    """EM for mixture weights: w_k <- mean_i r[i, k]. NLL never increases."""
    v = _values(m)
    n, k = v.shape
    w = uniform_weights(k) if init is None else check_weights(init, k)
    if (w <= 0).any():
        raise WeightOptError("EM needs a strictly positive initialization (zero weights stay zero)")
    init_w, init_nll = w.copy(), mixture_nll(v, w)
    hist = [init_nll]
    it = 0
    for it in range(1, max_iters + 1):
        w_new = responsibilities(v, w).mean(axis=0)
        w_new /= w_new.sum()
        hist.append(mixture_nll(v, w_new))
        moved = np.abs(w_new - w).max()
        w = w_new
        if moved < tol:
            break
    return _finish(w, hist[-1], it, "em", hist, init_w, init_nll)


def optimize_weights_grid(m, step: float = 1e-3) -> WeightOptResult:
    """Exhaustive search over the simplex lattice of spacing ``step`` (K <= 3).

    Lattice points are visited in lexicographic order and only strict
    improvements replace the incumbent, so ties resolve to the
    lexicographically smallest weight vector.
    """
    v = _values(m)
    k = v.shape[1]
    if k > 3:
        raise WeightOptError("grid search supports at most 3 models")
    n = int(round(1.0 / step))
    if n < 1 or abs(n * step - 1.0) > 1e-9:
        raise WeightOptError(f"step {step} does not divide 1")
    shift = v.max(axis=1)
    probs = np.ascontiguousarray(np.exp(v - shift[:, None]))
    counts, val = K.grid_search_mixture(probs, n)
    return WeightOptResult(np.asarray(counts, dtype=np.float64) / n, float(val - shift.sum()),
                           (n + 1) * (n + 2) // 2 if k == 3 else n + 1, "grid")


def lattice_points(k: int, step: float) -> np.ndarray:
    """All simplex lattice points of spacing ``step``, in lexicographic order."""
    n = int(round(1.0 / step))
    if k == 1:
        return np.ones((1, 1))
    pts = []

    def rec(prefix, left):
        if len(prefix) == k - 1:
            pts.append(prefix + [left])
            return
        for a in range(left + 1):
            rec(prefix + [a], left - a)

    rec([], n)
    return np.array(pts, dtype=np.float64) / n


OPTIMIZERS = {
    "gradient": optimize_weights_gd,
    "em": optimize_weights_em,
}
