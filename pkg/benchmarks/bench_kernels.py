"""Numba vs numpy timings for the hot kernels, plus one end-to-end step.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Kernel timings call the numba and numpy variants directly in this process. The
end-to-end row runs a training step and a greedy decode in a subprocess per
backend, so ``APPREPLY_BACKEND`` is honoured at import time. The first call
of each numba kernel (compilation or cache load) is excluded.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from appreply import _kernels as K

E2E = r"""
import json, time
import numpy as np
from appreply import _kernels
from appreply.model import Example, ModelConfig, ResponseModel, make_batch
from appreply.numcore import tensor as T
from appreply.numcore.optim import adam_step
from appreply.decoding import greedy_decode_batch

rng = np.random.default_rng(0)
V = 500
def ex():
    return Example(review=rng.integers(4, V, 40), rating=int(rng.integers(1, 6)),
                   snippets=[rng.integers(4, V, 30) for _ in range(5)], category=rng.integers(4, V, 2),
                   target=np.append(rng.integers(4, V, 30), 2))
exs = [ex() for _ in range(16)]
m = ResponseModel(ModelConfig(vocab_size=V, d=64, E=64))
b = make_batch(exs)
def step():
    loss = m.sequence_nll(b, training=True, p_tf=0.5, coin_rng=np.random.default_rng(1), rng=np.random.default_rng(2))
    T.backward(loss)
    m.params.clip_grad_norm(5.0)
    adam_step(m.params, 0.01)
step()
t = time.perf_counter(); step(); step(); train = (time.perf_counter() - t) / 2
t = time.perf_counter(); greedy_decode_batch(m, exs, 30); dec = time.perf_counter() - t
print(json.dumps({"backend": _kernels.BACKEND, "train_step": train, "greedy16": dec}))
"""


def kernel_cases(rng):
    B, d = 128, 128
    z = rng.normal(size=(B, 4 * d))
    c = rng.normal(size=(B, d))
    h, c1, acts, tc = K.lstm_forward_numpy(z, c)
    dh, dc = rng.normal(size=(B, d)), rng.normal(size=(B, d))

    n_docs = 50_000
    doc_ids = np.sort(rng.choice(n_docs, 5_000, replace=False)).astype(np.int64)
    tfs = rng.integers(1, 5, doc_ids.size).astype(np.int64)
    doc_len = rng.integers(5, 80, n_docs).astype(np.float64)
    scores = np.zeros(n_docs)

    a = rng.integers(0, 30, 120).astype(np.int64)
    bb = rng.integers(0, 30, 120).astype(np.int64)
    return {
        "lstm_forward (128x128)": (("lstm_forward", (z, c))),
        "lstm_backward (128x128)": (("lstm_backward", (dh, dc, acts, tc, c))),
        "bm25_accumulate (5k postings)": (("bm25_accumulate",
                                           (scores, doc_ids, tfs, doc_len, float(doc_len.mean()), 1.2, 0.75, 2.0))),
        "lcs_length (120x120)": (("lcs_length", (a, bb))),
    }


def bench(fn, args, repeat):
    fn(*args)
    number = 10
    best = min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat))
    return best / number


def end_to_end():
    rows = []
    for backend in ("auto", "numba", "numpy"):
        env = dict(os.environ, APPREPLY_BACKEND=backend)
        out = subprocess.run([sys.executable, "-c", E2E], env=env, capture_output=True, text=True, check=True)
        rows.append(json.loads(out.stdout.strip().splitlines()[-1]))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--skip-e2e", action="store_true")
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        sys.exit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'numba us':>10s} {'numpy us':>10s} {'speedup':>8s}")
    for label, (name, call_args) in kernel_cases(rng).items():
        t_nb = bench(getattr(K, name + "_numba"), call_args, args.repeat)
        t_np = bench(getattr(K, name + "_numpy"), call_args, args.repeat)
        print(f"{label:32s} {t_nb * 1e6:10.1f} {t_np * 1e6:10.1f} {t_np / t_nb:8.2f}")

    if not args.skip_e2e:
        print()
        print(f"{'backend':10s} {'train step s':>13s} {'greedy x16 s':>13s}")
        for row in end_to_end():
            print(f"{row['backend']:10s} {row['train_step']:13.3f} {row['greedy16']:13.3f}")


if __name__ == "__main__":
    main()
