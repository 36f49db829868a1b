"""
Hot numeric kernels
===================

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy
version with the same signature. ``APPREPLY_BACKEND`` selects which one
the rest of the package calls:

* ``auto`` (default) -- numba where it is faster, numpy elsewhere
* ``numba`` -- compiled loops for every kernel
* ``numpy`` -- vectorized fallback, no compilation

Under ``auto`` the LSTM forward gate math stays in numpy. It is five
transcendentals per element, and numpy's SIMD exp/tanh beat numba's scalar
libm calls by about 2x (see benchmarks/bench_kernels.py).

Both paths are plain float64 without ``fastmath`` so results stay
reproducible run to run.
"""

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


def _requested_backend() -> str:
    name = os.environ.get("APPREPLY_BACKEND", "auto").strip().lower()
    if name not in ("auto", "numba", "numpy"):
        raise ValueError(f"APPREPLY_BACKEND must be 'auto', 'numba' or 'numpy', got {name!r}")
    if name != "numpy" and not HAVE_NUMBA:
        return "numpy"
    return name


BACKEND = _requested_backend()


# ---------------------------------------------------------------------------
# LSTM pointwise gate math
#
# z is the (B, 4d) pre-activation laid out as [input | forget | cell | output].
# ---------------------------------------------------------------------------


def lstm_forward_numpy(z, c_prev):
    d = c_prev.shape[1]
    i = 1.0 / (1.0 + np.exp(-z[:, :d]))
    f = 1.0 / (1.0 + np.exp(-z[:, d : 2 * d]))
    g = np.tanh(z[:, 2 * d : 3 * d])
    o = 1.0 / (1.0 + np.exp(-z[:, 3 * d :]))
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    acts = np.concatenate([i, f, g, o], axis=1)
    return h, c, acts, tc


def lstm_backward_numpy(dh, dc, acts, tc, c_prev):
    d = c_prev.shape[1]
    i = acts[:, :d]
    f = acts[:, d : 2 * d]
    g = acts[:, 2 * d : 3 * d]
    o = acts[:, 3 * d :]
    dct = dc + dh * o * (1.0 - tc * tc)
    dz = np.empty_like(acts)
    dz[:, :d] = dct * g * i * (1.0 - i)
    dz[:, d : 2 * d] = dct * c_prev * f * (1.0 - f)
    dz[:, 2 * d : 3 * d] = dct * i * (1.0 - g * g)
    dz[:, 3 * d :] = dh * tc * o * (1.0 - o)
    dc_prev = dct * f
    return dz, dc_prev


# ---------------------------------------------------------------------------
# BM25 postings accumulation
# ---------------------------------------------------------------------------


def bm25_accumulate_numpy(scores, doc_ids, tfs, doc_len, avgdl, k1, b, idf):
    tf = tfs.astype(np.float64)
    norm = k1 * (1.0 - b + b * doc_len[doc_ids] / avgdl)
    contrib = idf * tf * (k1 + 1.0) / (tf + norm)
    # doc_ids are unique within a postings list, so fancy-index add is safe.
    scores[doc_ids] += contrib


# ---------------------------------------------------------------------------
# Longest common subsequence length
# ---------------------------------------------------------------------------


def lcs_length_numpy(a, b):
    m, n = a.shape[0], b.shape[0]
    if m == 0 or n == 0:
        return 0
    prev = np.zeros(n + 1, dtype=np.int64)
    for x in a:
        match = np.zeros(n + 1, dtype=np.int64)
        match[1:] = np.where(b == x, prev[:-1] + 1, 0)
        cur = np.maximum(match, prev)
        # running max realizes the left-neighbour dependency of the DP row
        cur = np.maximum.accumulate(cur)
        prev = cur
    return int(prev[n])


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def lstm_forward_numba(z, c_prev):
        B, d = c_prev.shape
        h = np.empty((B, d))
        c = np.empty((B, d))
        tc = np.empty((B, d))
        acts = np.empty((B, 4 * d))
        for r in range(B):
            for j in range(d):
                i = 1.0 / (1.0 + np.exp(-z[r, j]))
                f = 1.0 / (1.0 + np.exp(-z[r, d + j]))
                g = np.tanh(z[r, 2 * d + j])
                o = 1.0 / (1.0 + np.exp(-z[r, 3 * d + j]))
                cv = f * c_prev[r, j] + i * g
                t = np.tanh(cv)
                acts[r, j] = i
                acts[r, d + j] = f
                acts[r, 2 * d + j] = g
                acts[r, 3 * d + j] = o
                c[r, j] = cv
                tc[r, j] = t
                h[r, j] = o * t
        return h, c, acts, tc

    @numba.njit(cache=True)
    def lstm_backward_numba(dh, dc, acts, tc, c_prev):
        B, d = c_prev.shape
        dz = np.empty((B, 4 * d))
        dc_prev = np.empty((B, d))
        for r in range(B):
            for j in range(d):
                i = acts[r, j]
                f = acts[r, d + j]
                g = acts[r, 2 * d + j]
                o = acts[r, 3 * d + j]
                t = tc[r, j]
                dct = dc[r, j] + dh[r, j] * o * (1.0 - t * t)
                dz[r, j] = dct * g * i * (1.0 - i)
                dz[r, d + j] = dct * c_prev[r, j] * f * (1.0 - f)
                dz[r, 2 * d + j] = dct * i * (1.0 - g * g)
                dz[r, 3 * d + j] = dh[r, j] * t * o * (1.0 - o)
                dc_prev[r, j] = dct * f
        return dz, dc_prev

    @numba.njit(cache=True)
    def bm25_accumulate_numba(scores, doc_ids, tfs, doc_len, avgdl, k1, b, idf):
        for p in range(doc_ids.shape[0]):
            d = doc_ids[p]
            tf = float(tfs[p])
            norm = k1 * (1.0 - b + b * doc_len[d] / avgdl)
            scores[d] += idf * tf * (k1 + 1.0) / (tf + norm)

    @numba.njit(cache=True)
    def lcs_length_numba(a, b):
        m, n = a.shape[0], b.shape[0]
        if m == 0 or n == 0:
            return 0
        prev = np.zeros(n + 1, dtype=np.int64)
        cur = np.zeros(n + 1, dtype=np.int64)
        for i in range(m):
            cur[0] = 0
            for j in range(n):
                if a[i] == b[j]:
                    cur[j + 1] = prev[j] + 1
                elif prev[j + 1] >= cur[j]:
                    cur[j + 1] = prev[j + 1]
                else:
                    cur[j + 1] = cur[j]
            prev, cur = cur, prev
        return prev[n]


# kernels that numba does not speed up on this workload
_AUTO_NUMPY = frozenset({"lstm_forward"})


def _pick(name):
    if BACKEND == "numba" or (BACKEND == "auto" and name not in _AUTO_NUMPY):
        return globals()[name + "_numba"]
    return globals()[name + "_numpy"]


lstm_forward = _pick("lstm_forward")
lstm_backward = _pick("lstm_backward")
bm25_accumulate = _pick("bm25_accumulate")


def lcs_length(a, b) -> int:
    """LCS length of two integer id arrays."""
    a = np.ascontiguousarray(a, dtype=np.int64)
    b = np.ascontiguousarray(b, dtype=np.int64)
    return int(_pick("lcs_length")(a, b))
