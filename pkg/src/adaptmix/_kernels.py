"""Hot numeric kernels, compiled with numba when available.

Every kernel has a pure-numpy twin with the same signature. The active
backend is picked once at import time: set ``ADAPTMIX_DISABLE_NUMBA=1`` to
force the numpy path (useful for debugging and for the benchmark). Both
implementations are always importable through ``NUMPY_KERNELS`` and
``NUMBA_KERNELS`` so tests can compare them directly.
"""
from __future__ import annotations

import math
import os

import numpy as np

_DISABLED = os.environ.get("ADAPTMIX_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


def _improves(val, best):
    """Strict improvement beyond float noise; near-equal values count as ties."""
    if not val < best:
        return False
    return best == math.inf or val < best - 1e-12 * (1.0 + abs(best))


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------


def _np_build_contexts(tokens, offsets, n_ctx, bos, eos):
    n_rec = offsets.shape[0] - 1
    lengths = np.diff(offsets)
    total = int(lengths.sum()) + n_rec
    ctx = np.empty((total, n_ctx), dtype=np.int64)
    targets = np.empty(total, dtype=np.int64)
    rec_of = np.empty(total, dtype=np.int64)
    pos = 0
    for r in range(n_rec):
        seq = tokens[offsets[r]:offsets[r + 1]]
        padded = np.concatenate((np.full(n_ctx, bos, dtype=np.int64), seq.astype(np.int64)))
        m = seq.shape[0] + 1
        if n_ctx:
            win = np.lib.stride_tricks.sliding_window_view(padded, n_ctx)[:m]
            ctx[pos:pos + m] = win
        targets[pos:pos + m - 1] = seq
        targets[pos + m - 1] = eos
        rec_of[pos:pos + m] = r
        pos += m
    return ctx, targets, rec_of


def _np_softmax_xent(logits, targets):
    """Turn ``logits`` in place into ``softmax - onehot``; return per-row NLL."""
    rows = np.arange(logits.shape[0])
    mx = logits.max(axis=1, keepdims=True)
    logits -= mx
    shifted_target = logits[rows, targets]
    np.exp(logits, out=logits)
    z = logits.sum(axis=1, keepdims=True)
    logits /= z
    nll = np.log(z[:, 0]) - shifted_target
    logits[rows, targets] -= 1.0
    return nll


def _np_target_logprob(logits, targets):
    rows = np.arange(logits.shape[0])
    mx = logits.max(axis=1)
    lse = mx + np.log(np.exp(logits - mx[:, None]).sum(axis=1))
    return logits[rows, targets] - lse


def _np_scatter_add_rows(dst, idx, src):
    np.add.at(dst, idx, src)


def _np_grid_search_mixture(probs, n):
    """Exhaustive lattice search; ``probs`` is (N, K) with K in {1, 2, 3}."""
    k = probs.shape[1]
    if k == 1:
        return np.array([n], dtype=np.int64), -np.log(probs[:, 0]).sum()
    best_val = np.inf
    best = np.zeros(k, dtype=np.int64)
    if k == 2:
        a = np.arange(n + 1)
        w = np.stack((a, n - a), axis=1) / n
        vals = -np.log(w @ probs.T).sum(axis=1)
        for i in range(n + 1):
            if _improves(vals[i], best_val):
                best_val = vals[i]
                best[0], best[1] = a[i], n - a[i]
        return best, best_val
    for a in range(n + 1):
        b = np.arange(n - a + 1)
        w = np.stack((np.full_like(b, a), b, n - a - b), axis=1) / n
        vals = -np.log(w @ probs.T).sum(axis=1)
        for j in range(b.shape[0]):
            if _improves(vals[j], best_val):
                best_val = vals[j]
                best[0], best[1], best[2] = a, b[j], n - a - b[j]
    return best, best_val


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------


def _nb_build_contexts(tokens, offsets, n_ctx, bos, eos):
    n_rec = offsets.shape[0] - 1
    total = 0
    for r in range(n_rec):
        total += offsets[r + 1] - offsets[r] + 1
    ctx = np.empty((total, n_ctx), dtype=np.int64)
    targets = np.empty(total, dtype=np.int64)
    rec_of = np.empty(total, dtype=np.int64)
    pos = 0
    for r in range(n_rec):
        start = offsets[r]
        length = offsets[r + 1] - start
        for t in range(length + 1):
            for j in range(n_ctx):
                src = t - n_ctx + j
                ctx[pos, j] = bos if src < 0 else tokens[start + src]
            targets[pos] = eos if t == length else tokens[start + t]
            rec_of[pos] = r
            pos += 1
    return ctx, targets, rec_of


def _nb_softmax_xent(logits, targets):
    n, v = logits.shape
    nll = np.empty(n)
    for i in range(n):
        mx = logits[i, 0]
        for j in range(1, v):
            if logits[i, j] > mx:
                mx = logits[i, j]
        shifted_target = logits[i, targets[i]] - mx
        z = 0.0
        for j in range(v):
            e = math.exp(logits[i, j] - mx)
            logits[i, j] = e
            z += e
        inv = 1.0 / z
        for j in range(v):
            logits[i, j] *= inv
        nll[i] = math.log(z) - shifted_target
        logits[i, targets[i]] -= 1.0
    return nll


def _nb_target_logprob(logits, targets):
    n, v = logits.shape
    out = np.empty(n)
    for i in range(n):
        mx = logits[i, 0]
        for j in range(1, v):
            if logits[i, j] > mx:
                mx = logits[i, j]
        z = 0.0
        for j in range(v):
            z += math.exp(logits[i, j] - mx)
        out[i] = logits[i, targets[i]] - mx - math.log(z)
    return out


def _nb_scatter_add_rows(dst, idx, src):
    d = dst.shape[1]
    for i in range(idx.shape[0]):
        r = idx[i]
        for j in range(d):
            dst[r, j] += src[i, j]


def _nb_grid_search_mixture(probs, n):
    nrec, k = probs.shape
    best = np.zeros(k, dtype=np.int64)
    best_val = np.inf
    inv = 1.0 / n
    if k == 1:
        s = 0.0
        for i in range(nrec):
            s -= math.log(probs[i, 0])
        best[0] = n
        return best, s
    if k == 2:
        for a in range(n + 1):
            w0 = a * inv
            w1 = (n - a) * inv
            s = 0.0
            for i in range(nrec):
                s -= math.log(w0 * probs[i, 0] + w1 * probs[i, 1])
            if _nb_improves(s, best_val):
                best_val = s
                best[0] = a
                best[1] = n - a
        return best, best_val
    for a in range(n + 1):
        w0 = a * inv
        for b in range(n - a + 1):
            w1 = b * inv
            w2 = (n - a - b) * inv
            s = 0.0
            for i in range(nrec):
                s -= math.log(w0 * probs[i, 0] + w1 * probs[i, 1] + w2 * probs[i, 2])
            if _nb_improves(s, best_val):
                best_val = s
                best[0] = a
                best[1] = b
                best[2] = n - a - b
    return best, best_val


NUMPY_KERNELS = {
    "build_contexts": _np_build_contexts,
    "softmax_xent": _np_softmax_xent,
    "target_logprob": _np_target_logprob,
    "scatter_add_rows": _np_scatter_add_rows,
    "grid_search_mixture": _np_grid_search_mixture,
}

if HAVE_NUMBA:
    _nb_improves = njit(cache=True, nogil=True, inline="always")(_improves)
    NUMBA_KERNELS = {
        "build_contexts": njit(cache=True, nogil=True)(_nb_build_contexts),
        "softmax_xent": njit(cache=True, nogil=True)(_nb_softmax_xent),
        "target_logprob": njit(cache=True, nogil=True)(_nb_target_logprob),
        "scatter_add_rows": njit(cache=True, nogil=True)(_nb_scatter_add_rows),
        "grid_search_mixture": njit(cache=True, nogil=True)(_nb_grid_search_mixture),
    }
else:  # pragma: no cover
    NUMBA_KERNELS = {}

USE_NUMBA = HAVE_NUMBA and not _DISABLED
BACKEND = "numba" if USE_NUMBA else "numpy"
# Row-wise softmax stays on numpy even under numba: without SVML the jitted
# exp loop is scalar and measurably slower than numpy's vectorized exp
# (see benchmarks/bench_kernels.py).
NUMPY_PREFERRED = ("softmax_xent", "target_logprob")
_ACTIVE = ({name: (NUMPY_KERNELS if name in NUMPY_PREFERRED else NUMBA_KERNELS)[name] for name in NUMPY_KERNELS}
           if USE_NUMBA else NUMPY_KERNELS)

build_contexts = _ACTIVE["build_contexts"]
softmax_xent = _ACTIVE["softmax_xent"]
target_logprob = _ACTIVE["target_logprob"]
scatter_add_rows = _ACTIVE["scatter_add_rows"]
grid_search_mixture = _ACTIVE["grid_search_mixture"]
