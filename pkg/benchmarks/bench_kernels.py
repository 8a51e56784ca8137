"""Time the numba kernels against the pure-numpy fallback.

Both kernel tables are timed directly (``NUMPY_KERNELS`` vs
``NUMBA_KERNELS``), and the end-to-end workloads run once per backend.
Each backend runs in its own interpreter because the backend is chosen at
import time from ADAPTMIX_DISABLE_NUMBA. Usage:

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import json
import os
import subprocess
import sys
import time

WORKLOAD = r"""
import json, sys, time
import numpy as np
from adaptmix import _kernels as K, nnlm
from adaptmix.weight_opt import optimize_weights_grid

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)


def best(fn):
    fn()  # warm-up (includes JIT compilation for numba)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


m3 = -rng.integers(1, 15, size=(50, 1)) * rng.uniform(1, 3, size=(50, 3))
logits = rng.normal(0, 3, size=(4096, 2000))
targets = rng.integers(0, 2000, size=4096)
lengths = rng.integers(5, 15, size=4000)
tokens = rng.integers(3, 2000, size=lengths.sum()).astype(np.int32)
offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
model = nnlm.init_model(nnlm.ModelConfig(vocab_size=2000, seed=0))
batch = [rng.integers(3, 2000, size=12) for _ in range(32)]
records = [rng.integers(3, 2000, size=12) for _ in range(500)]


def train_steps():
    m = model.clone()
    for _ in range(20):
        nnlm.train_step(m, batch, 0.1)


idx = rng.integers(0, 2000, size=20000)
src = rng.normal(size=(20000, 32))
dst = np.zeros((2000, 32))
table = K.NUMBA_KERNELS if K.BACKEND == "numba" else K.NUMPY_KERNELS
out = {
    "backend": K.BACKEND,
    "grid K=3 N=50 step=1e-3": best(lambda: optimize_weights_grid(m3, 1e-3)),
    "softmax_xent 4096x2000": best(lambda: table["softmax_xent"](logits.copy(), targets)),
    "target_logprob 4096x2000": best(lambda: table["target_logprob"](logits, targets)),
    "scatter_add_rows 20000x32": best(lambda: table["scatter_add_rows"](dst, idx, src)),
    "build_contexts 4000 records": best(lambda: K.build_contexts(tokens, offsets, 3, 1, 2)),
    "20 train steps (V=2000, batch 32)": best(train_steps),
    "score 500 records": best(lambda: model.log_prob_records(records)),
}
print(json.dumps(out))
"""


def run(disable: bool, repeat: int) -> dict:
    env = dict(os.environ, ADAPTMIX_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", WORKLOAD, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    t0 = time.perf_counter()
    fast, slow = run(False, args.repeat), run(True, args.repeat)
    print(f"{'kernel':<36}{fast['backend']:>12}{slow['backend']:>12}{'speedup':>10}")
    for key in fast:
        if key == "backend":
            continue
        print(f"{key:<36}{fast[key] * 1e3:>10.2f}ms{slow[key] * 1e3:>10.2f}ms{slow[key] / fast[key]:>9.1f}x")
    print(f"(best of {args.repeat}; total {time.perf_counter() - t0:.1f} s)")


if __name__ == "__main__":
    main()
