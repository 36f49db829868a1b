import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from appreply import _kernels
from appreply.evalmetrics import (
    bleu,
    brevity_penalty,
    evaluate_corpus,
    lcs_length,
    modified_ngram_precision,
    rouge_l,
)

tokens = st.lists(st.sampled_from(list("abcdefg")), min_size=0, max_size=50)


def lcs_reference(a, b):
    """Plain quadratic table, kept free of the kernel path."""
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[-1][-1]


class TestPrecision:
    def test_identical(self):
        s = "the app crashes on start".split()
        for n in range(1, 5):
            assert modified_ngram_precision([s], [s], n) == 100.0

    def test_clipping(self):
        assert modified_ngram_precision([["the"] * 4], [["the", "cat"]], 1) == 25.0

    def test_disjoint(self):
        assert modified_ngram_precision([["a", "b"]], [["c", "d"]], 1) == 0.0

    def test_short_candidate_contributes_nothing(self):
        # the 1-token candidate has no bigrams; only the second pair counts
        assert modified_ngram_precision([["a"], ["x", "y"]], [["a"], ["x", "y"]], 2) == 100.0

    @given(st.lists(st.text(min_size=1, max_size=3), unique=True, max_size=12),
           st.lists(st.text(min_size=1, max_size=3), unique=True, max_size=12))
    def test_unigram_without_repeats_is_overlap_ratio(self, cand, ref):
        if not cand:
            return
        expected = 100.0 * len(set(cand) & set(ref)) / len(cand)
        assert modified_ngram_precision([cand], [ref], 1) == pytest.approx(expected)


class TestBleu:
    def test_identical(self):
        s = ["we", "fixed", "the", "crash", "in", "the", "update"]
        assert bleu([s, s[:5]], [s, s[:5]]) == 100.0

    def test_brevity_penalty(self):
        cand = ["a", "b", "c", "d"]
        ref = ["a", "b", "c", "d", "e", "f"]
        assert bleu([cand], [ref]) == pytest.approx(100.0 * math.exp(1.0 - 6 / 4), abs=1e-12)
        assert brevity_penalty(4, 6) < 1.0

    def test_zero_precision_gives_zero(self):
        assert bleu([["a", "b", "c"]], [["a", "b", "c", "d"][::-1]]) == 0.0

    def test_empty_corpus(self):
        assert bleu([], []) == 0.0

    def test_sentence_average_flag(self):
        a = ["a", "b", "c", "d"]
        assert bleu([a, a], [a, a], sentence_average=True) == 100.0
        assert bleu([a, ["x"] * 4], [a, a], sentence_average=True) == 50.0


class TestRougeL:
    def test_identical(self):
        s = ["thanks", "for", "the", "feedback"]
        assert rouge_l([s], [s]) == 100.0

    def test_hand_lcs(self):
        assert rouge_l([["the", "cat", "sat"]], [["the", "cat", "ran"]]) == pytest.approx(66.6667, abs=0.01)

    def test_disjoint(self):
        assert rouge_l([["a"]], [["b"]]) == 0.0

    def test_empty_candidate(self):
        assert rouge_l([[]], [["b"]]) == 0.0

    @given(tokens, tokens)
    def test_lcs_matches_reference(self, a, b):
        assert lcs_length(a, b) == lcs_reference(a, b)

    @given(tokens, tokens)
    def test_lcs_backends_agree(self, a, b):
        import numpy as np

        ia = np.array([ord(t) for t in a], dtype=np.int64)
        ib = np.array([ord(t) for t in b], dtype=np.int64)
        expected = lcs_reference(a, b)
        assert _kernels.lcs_length_numpy(ia, ib) == expected
        if _kernels.HAVE_NUMBA:
            assert _kernels.lcs_length_numba(ia, ib) == expected


@given(st.lists(st.tuples(tokens, tokens), min_size=1, max_size=6), st.randoms())
def test_permutation_invariance_and_range(pairs, rnd):
    cands = [c for c, _ in pairs]
    refs = [r for _, r in pairs]
    base = evaluate_corpus(cands, refs)
    order = list(range(len(pairs)))
    rnd.shuffle(order)
    shuffled = evaluate_corpus([cands[i] for i in order], [refs[i] for i in order])
    for field in ("bleu4", "p1", "p2", "p3", "p4", "rouge_l"):
        v = getattr(base, field)
        assert 0.0 <= v <= 100.0
        assert getattr(shuffled, field) == pytest.approx(v, abs=1e-9)


@given(st.lists(st.lists(st.sampled_from(list("abcdefg")), min_size=4, max_size=20), min_size=1, max_size=5))
def test_self_evaluation_is_perfect(corpus):
    rep = evaluate_corpus(corpus, corpus)
    assert rep.bleu4 == pytest.approx(100.0, abs=1e-9)
    assert rep.rouge_l == pytest.approx(100.0, abs=1e-9)
