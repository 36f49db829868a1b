import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from appreply import _kernels
from appreply.retrieval import (
    Bm25Params,
    IndexStateError,
    InvertedIndex,
    PostingsList,
    best_window,
    decode_varints,
    encode_varints,
    intersect,
    load_index,
    save_index,
    sentence_spans,
)


def brute_force_bm25(docs, query, k1=1.2, b=0.75):
    """Score every document straight from token lists, no index involved."""
    N = len(docs)
    avgdl = sum(len(t) for t in docs.values()) / N
    scores = {}
    for d, toks in docs.items():
        s = 0.0
        for q in query:
            f = toks.count(q)
            if f == 0:
                continue
            n_q = sum(1 for t in docs.values() if q in t)
            w = math.log(1 + (N - n_q + 0.5) / (n_q + 0.5))
            s += w * f * (k1 + 1) / (f + k1 * (1 - b + b * len(toks) / avgdl))
        scores[d] = s
    return scores


def build(docs, app_of=None, kind_of=None):
    idx = InvertedIndex()
    for d, toks in docs.items():
        idx.add_document(d, (app_of or {}).get(d, "app"), (kind_of or {}).get(d, "review"), toks)
    return idx.freeze()


class TestBuild:
    def test_counting(self):
        idx = build({7: ["a", "b", "a"]})
        assert [(p.doc_id, p.term_freq) for p in idx.postings["a"]] == [(7, 2)]
        assert [(p.doc_id, p.term_freq) for p in idx.postings["b"]] == [(7, 1)]

    def test_empty_doc(self):
        idx = build({0: [], 1: ["x"]})
        assert idx.doc_len(0) == 0
        assert idx.postings["x"].doc_ids.tolist() == [1]

    def test_stats(self):
        idx = build({0: ["a", "b"], 1: ["a", "b", "c", "d"]})
        assert idx.N == 2
        assert idx.avgdl == pytest.approx(3.0, abs=1e-9)

    def test_duplicate_doc(self):
        idx = InvertedIndex()
        idx.add_document(0, "a", "review", ["x"])
        with pytest.raises(IndexStateError):
            idx.add_document(0, "a", "review", ["y"])

    def test_freeze_contract(self):
        idx = InvertedIndex()
        with pytest.raises(IndexStateError):
            idx.freeze()
        idx.add_document(0, "a", "review", ["x"])
        assert idx.freeze() is idx.freeze()
        with pytest.raises(IndexStateError):
            idx.add_document(1, "a", "review", ["y"])

    def test_skip_stride(self):
        pl = PostingsList(list(range(9)), [1] * 9)
        assert pl.stride == 3
        assert pl.skip_positions() == [(0, 3), (3, 6)]

    def test_params_range(self):
        with pytest.raises(ValueError):
            Bm25Params(k1=1.0)
        with pytest.raises(ValueError):
            Bm25Params(b=1.5)


@given(st.lists(st.integers(0, 300), max_size=80), st.lists(st.integers(0, 300), max_size=80))
def test_skip_intersection_matches_plain(a, b):
    pa = PostingsList(sorted(set(a)), [1] * len(set(a)))
    pb = PostingsList(sorted(set(b)), [1] * len(set(b)))
    expected = sorted(set(a) & set(b))
    assert intersect(pa, pb, use_skips=False) == expected
    assert intersect(pa, pb, use_skips=True) == expected


class TestBm25:
    def test_no_overlap_is_zero(self):
        idx = build({0: ["a"], 1: ["b"]})
        assert idx.bm25_score(["z"], 0) == 0.0

    def test_average_length_cancels(self):
        idx = build({0: ["q", "x"], 1: ["y", "z"]})
        assert idx.bm25_score(["q"], 0) == pytest.approx(idx.idf("q"), abs=1e-12)

    def test_two_doc_hand_formula(self):
        idx = build({1: ["app", "crash"], 2: ["app", "good"]})
        # N=2, n=1 for "crash", |D| = avgdl = 2, f = 1
        w = math.log(1 + (2 - 1 + 0.5) / (1 + 0.5))
        expected = w * 1 * 2.2 / (1 + 1.2 * (1 - 0.75 + 0.75 * 2 / 2))
        assert idx.bm25_score(["crash"], 1) == pytest.approx(expected, abs=1e-12)
        assert idx.bm25_score(["crash"], 2) == 0.0

    def test_unknown_doc(self):
        idx = build({0: ["a"]})
        with pytest.raises(IndexStateError):
            idx.bm25_score(["a"], 5)

    def test_monotone_in_term_frequency(self):
        base = ["f"] * 5 + ["x"] * 20
        scores = []
        for f in range(1, 6):
            # same length, same document frequencies; only f(q, D) changes
            toks = ["q"] * f + ["pad"] * (25 - f)
            idx = build({0: toks, 1: base, 2: ["q", "r"]})
            scores.append(idx.bm25_score(["q"], 0))
        assert all(a <= b for a, b in zip(scores, scores[1:]))


class TestSearch:
    def test_k_zero(self):
        assert build({0: ["a"]}).search(["a"], k=0) == []

    def test_unindexed_query(self):
        assert build({0: ["a"]}).search(["nope"], k=5) == []

    def test_app_filter(self):
        idx = build({0: ["a"], 1: ["a"], 2: ["a"]}, app_of={0: "x", 1: "y", 2: "x"})
        assert [d for d, _ in idx.search(["a"], "x", k=5)] == [0, 2]
        assert idx.search(["a"], "missing", k=5) == []

    def test_matches_linear_scan(self):
        rng = np.random.default_rng(0)
        vocab = [f"t{i}" for i in range(300)]
        docs = {d: list(rng.choice(vocab, size=rng.integers(0, 40))) for d in range(1000)}
        apps = {d: f"app{d % 7}" for d in docs}
        idx = build(docs, app_of=apps)
        oracle = brute_force_bm25(docs, [])
        for qn in range(100):
            query = list(rng.choice(vocab, size=rng.integers(1, 6)))
            app = f"app{qn % 7}" if qn % 2 else None
            oracle = brute_force_bm25(docs, query)
            ranked = sorted(
                ((d, s) for d, s in oracle.items() if s > 0 and (app is None or apps[d] == app)),
                key=lambda x: (-x[1], x[0]),
            )[:10]
            got = idx.search(query, app, k=10)
            assert [d for d, _ in got] == [d for d, _ in ranked]
            np.testing.assert_allclose([s for _, s in got], [s for _, s in ranked], atol=1e-9, rtol=0)

    def test_reproducible(self):
        idx = build({0: ["a", "b"], 1: ["b", "c"], 2: ["a", "a"]})
        assert idx.search(["a", "b"], k=3) == idx.search(["a", "b"], k=3)


def window_oracle(tokens, weights, max_tokens):
    """Enumerate every sentence run and rank by (score, #sentences, start)."""
    sents = []
    cur = []
    for t in tokens:
        cur.append(t)
        if t in {".", "!", "?"}:
            sents.append(cur)
            cur = []
    if cur:
        sents.append(cur)
    starts = np.cumsum([0] + [len(s) for s in sents])
    cands = []
    for i in range(len(sents)):
        for j in range(i, len(sents)):
            toks = [t for s in sents[i : j + 1] for t in s]
            if len(toks) > max_tokens:
                break
            score = math.fsum(weights[t] for t in set(toks) if t in weights)
            cands.append((-score, j - i, int(starts[i]), toks))
    return min(cands)


class TestSnippets:
    def test_single_sentence_doc(self):
        toks = [f"w{i}" for i in range(20)]
        idx = build({0: toks})
        assert list(idx.extract_snippet(0, ["w3"]).tokens) == toks

    def test_no_query_term_gives_first_sentence(self):
        idx = build({0: "a b . c d . e .".split()})
        assert list(idx.extract_snippet(0, ["zzz"]).tokens) == ["a", "b", "."]

    def test_second_sentence(self):
        toks = "app is fine . download fails on resume .".split()
        idx = build({0: toks, 1: "app works .".split()})
        weights = {q: idx.idf(q) for q in ("download", "resume")}
        expected = window_oracle(toks, weights, 50)[3]
        assert expected == "download fails on resume .".split()
        assert list(idx.extract_snippet(0, ["download", "resume"]).tokens) == expected

    def test_long_sentence_is_chunked(self):
        toks = [f"w{i}" for i in range(120)]
        assert sentence_spans(toks, 50) == [(0, 50), (50, 100), (100, 120)]

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.sampled_from(["a", "b", "c", "d", "e", ".", "!"]), max_size=60),
        st.dictionaries(st.sampled_from(["a", "b", "c"]), st.floats(0.1, 5.0), max_size=3),
        st.integers(3, 20),
    )
    def test_window_matches_exhaustive_oracle(self, toks, weights, max_tokens):
        # the oracle does not chunk, so only compare when every sentence fits
        if any(e - s > max_tokens for s, e in sentence_spans(toks, 10_000)):
            return
        start, end, score = best_window(toks, weights, max_tokens)
        if not toks:
            assert (start, end) == (0, 0)
            return
        neg, _, o_start, o_toks = window_oracle(toks, weights, max_tokens)
        assert toks[start:end] == o_toks
        assert start == o_start
        assert score == -neg


class TestRetrieveContext:
    def corpus(self):
        idx = InvertedIndex()
        idx.add_document(0, "a", "description", "a fast notes app . it syncs with the cloud .".split())
        idx.add_document(1, "a", "review", "sync fails on my phone .".split())
        idx.add_document(2, "a", "review", "the cloud sync is slow .".split())
        idx.add_document(3, "b", "review", "sync fails on my phone .".split())
        idx.add_document(4, "b", "description", "a game .".split())
        return idx.freeze()

    def test_availability_bound(self):
        bundle = self.corpus().retrieve_context("sync is broken".split(), "a")
        assert [s.source_kind for s in bundle] == ["review", "review", "description"]

    def test_excludes_query_review(self):
        bundle = self.corpus().retrieve_context("sync fails on my phone .".split(), "a")
        assert 1 not in [s.source_doc for s in bundle]

    def test_unknown_app(self):
        with pytest.raises(IndexStateError):
            self.corpus().retrieve_context(["x"], "zzz")

    def test_default_bundle_size(self):
        idx = InvertedIndex()
        idx.add_document(0, "a", "description", "notes app .".split())
        for d in range(1, 10):
            idx.add_document(d, "a", "review", f"notes review {d} .".split())
        idx.freeze()
        bundle = idx.retrieve_context(["notes"], "a")
        assert len(bundle) == 5
        assert sum(len(s.tokens) for s in bundle) <= 5 * 50

    def test_compositional_oracle(self):
        idx = self.corpus()
        q = "cloud sync".split()
        expected = [idx.extract_snippet(d, q) for d, _ in idx.search(q, "a", k=10, kind="review")][:4]
        expected.append(idx.extract_snippet(0, q))
        assert idx.retrieve_context(q, "a") == expected

    @given(st.lists(st.sampled_from(["x", "y", "z", "."]), min_size=1, max_size=80))
    def test_snippets_are_contiguous(self, toks):
        idx = InvertedIndex()
        idx.add_document(0, "a", "review", toks)
        idx.freeze()
        snip = idx.extract_snippet(0, ["x", "z"])
        assert tuple(toks[snip.start : snip.start + len(snip.tokens)]) == snip.tokens
        assert len(snip.tokens) <= 50


class TestPersistence:
    def test_varint_round_trip(self):
        vals = [0, 1, 127, 128, 300, 2**40]
        assert decode_varints(encode_varints(vals), len(vals)) == vals

    def test_round_trip_and_byte_identity(self, tmp_path):
        idx = TestRetrieveContext().corpus()
        save_index(idx, tmp_path / "a.idx")
        save_index(idx, tmp_path / "b.idx")
        assert (tmp_path / "a.idx").read_bytes() == (tmp_path / "b.idx").read_bytes()
        back = load_index(tmp_path / "a.idx")
        assert back.stats() == idx.stats()
        assert back.search(["sync"], k=5) == idx.search(["sync"], k=5)
        save_index(back, tmp_path / "c.idx")
        assert (tmp_path / "c.idx").read_bytes() == (tmp_path / "a.idx").read_bytes()

    def test_corrupt_file(self, tmp_path):
        (tmp_path / "bad.idx").write_bytes(b"nonsense")
        with pytest.raises(IndexStateError):
            load_index(tmp_path / "bad.idx")


@pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba unavailable")
def test_bm25_kernels_agree():
    rng = np.random.default_rng(3)
    doc_len = rng.integers(1, 50, size=200).astype(float)
    ids = np.sort(rng.choice(200, size=60, replace=False))
    tfs = rng.integers(1, 5, size=60)
    a = np.zeros(200)
    b = np.zeros(200)
    _kernels.bm25_accumulate_numpy(a, ids, tfs, doc_len, doc_len.mean(), 1.2, 0.75, 0.7)
    _kernels.bm25_accumulate_numba(b, ids, tfs, doc_len, doc_len.mean(), 1.2, 0.75, 0.7)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)
