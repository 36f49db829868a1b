"""BM25 inverted index over app descriptions and reviews, plus snippet windows.

Documents are token lists. Postings hold (doc_id, term_freq) sorted by
doc_id with skip links every ceil(sqrt(len)) entries. Once frozen an index
is immutable and can be persisted with :func:`save_index`.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels

SENTENCE_END = frozenset({".", "!", "?"})
DOC_KINDS = ("review", "description")


class IndexStateError(LookupError):
    """Raised for index misuse: unknown ids, frozen mutations, empty builds."""


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if not 1.2 <= self.k1 <= 2.0:
            raise ValueError(f"k1 must lie in [1.2, 2.0], got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must lie in [0, 1], got {self.b}")


@dataclass(frozen=True)
class Posting:
    doc_id: int
    term_freq: int


@dataclass(frozen=True)
class Snippet:
    tokens: tuple
    source_doc: int
    source_kind: str
    score: float
    start: int = 0  # token offset inside the source document


@dataclass(frozen=True)
class DocMeta:
    app_id: str
    kind: str
    tokens: tuple


class PostingsList:
    """Sorted postings with evenly spaced skip pointers."""

    __slots__ = ("doc_ids", "tfs", "ranks", "stride")

    def __init__(self, doc_ids, tfs, ranks=None):
        self.doc_ids = np.asarray(doc_ids, dtype=np.int64)
        self.tfs = np.asarray(tfs, dtype=np.int64)
        self.ranks = self.doc_ids if ranks is None else np.asarray(ranks, dtype=np.int64)
        n = len(self.doc_ids)
        self.stride = max(1, math.isqrt(n - 1) + 1) if n > 1 else 1

    def __len__(self):
        return len(self.doc_ids)

    def __iter__(self):
        for d, f in zip(self.doc_ids.tolist(), self.tfs.tolist()):
            yield Posting(d, f)

    def skip_positions(self):
        """Positions carrying a skip pointer and where each one lands."""
        n = len(self)
        src = list(range(0, n, self.stride))
        return [(i, i + self.stride) for i in src if i + self.stride < n]

    def has_skip(self, pos: int) -> bool:
        return pos % self.stride == 0 and pos + self.stride < len(self)


def intersect(a: PostingsList, b: PostingsList, use_skips=True) -> list[int]:
    """Doc ids present in both lists, via the merge walk (optionally skipping)."""
    i = j = 0
    out = []
    da, db = a.doc_ids, b.doc_ids
    while i < len(a) and j < len(b):
        x, y = da[i], db[j]
        if x == y:
            out.append(int(x))
            i += 1
            j += 1
        elif x < y:
            if use_skips and a.has_skip(i) and da[i + a.stride] <= y:
                while a.has_skip(i) and da[i + a.stride] <= y:
                    i += a.stride
            else:
                i += 1
        else:
            if use_skips and b.has_skip(j) and db[j + b.stride] <= x:
                while b.has_skip(j) and db[j + b.stride] <= x:
                    j += b.stride
            else:
                j += 1
    return out


def idf(N: int, n_q: int) -> float:
    return math.log(1.0 + (N - n_q + 0.5) / (n_q + 0.5))


class InvertedIndex:
    def __init__(self):
        self._building: dict[str, dict[int, int]] = {}
        self.meta: dict[int, DocMeta] = {}
        self.frozen = False
        self.postings: dict[str, PostingsList] = {}
        self.avgdl = 0.0
        self.params = Bm25Params()
        # dense views, filled by freeze()
        self._ids = np.zeros(0, dtype=np.int64)
        self._rank: dict[int, int] = {}
        self._doc_len = np.zeros(0)
        self._app_of = np.zeros(0, dtype=np.int64)
        self._kind_of = np.zeros(0, dtype=np.int64)
        self._apps: dict[str, int] = {}

    # -- build ---------------------------------------------------------------

    @property
    def N(self) -> int:
        return len(self.meta)

    def add_document(self, doc_id: int, app_id: str, kind: str, tokens) -> None:
        if self.frozen:
            raise IndexStateError("index is frozen; no further documents may be added")
        doc_id = int(doc_id)
        if doc_id < 0:
            raise ValueError("doc ids must be non-negative")
        if doc_id in self.meta:
            raise IndexStateError(f"duplicate doc id {doc_id}")
        if kind not in DOC_KINDS:
            raise ValueError(f"document kind must be one of {DOC_KINDS}, got {kind!r}")
        tokens = tuple(tokens)
        self.meta[doc_id] = DocMeta(str(app_id), kind, tokens)
        for t in tokens:
            per_doc = self._building.setdefault(t, {})
            per_doc[doc_id] = per_doc.get(doc_id, 0) + 1

    def freeze(self, params: Bm25Params | None = None) -> "InvertedIndex":
        if self.frozen:
            return self
        if not self.meta:
            raise IndexStateError("cannot freeze an empty index")
        if params is not None:
            self.params = params
        self._ids = np.array(sorted(self.meta), dtype=np.int64)
        self._rank = {int(d): r for r, d in enumerate(self._ids)}
        self._doc_len = np.array([len(self.meta[int(d)].tokens) for d in self._ids], dtype=np.float64)
        self.avgdl = float(self._doc_len.mean())
        apps = sorted({m.app_id for m in self.meta.values()})
        self._apps = {a: i for i, a in enumerate(apps)}
        self._app_of = np.array([self._apps[self.meta[int(d)].app_id] for d in self._ids], dtype=np.int64)
        self._kind_of = np.array([DOC_KINDS.index(self.meta[int(d)].kind) for d in self._ids], dtype=np.int64)
        for term in sorted(self._building):
            per_doc = self._building[term]
            ids = sorted(per_doc)
            self.postings[term] = PostingsList(ids, [per_doc[d] for d in ids], [self._rank[d] for d in ids])
        self._building = {}
        self.frozen = True
        return self

    def _require_frozen(self):
        if not self.frozen:
            raise IndexStateError("index must be frozen first")

    # -- statistics ----------------------------------------------------------

    def doc_len(self, doc_id: int) -> int:
        return len(self._doc(doc_id).tokens)

    def doc_freq(self, term: str) -> int:
        pl = self.postings.get(term)
        return 0 if pl is None else len(pl)

    def idf(self, term: str) -> float:
        return idf(self.N, self.doc_freq(term))

    def term_freq(self, term: str, doc_id: int) -> int:
        pl = self.postings.get(term)
        if pl is None:
            return 0
        pos = np.searchsorted(pl.doc_ids, doc_id)
        if pos < len(pl) and pl.doc_ids[pos] == doc_id:
            return int(pl.tfs[pos])
        return 0

    def _doc(self, doc_id: int) -> DocMeta:
        try:
            return self.meta[int(doc_id)]
        except KeyError:
            raise IndexStateError(f"unknown doc id {doc_id}") from None

    def apps(self):
        return sorted(self._apps) if self.frozen else sorted({m.app_id for m in self.meta.values()})

    def docs_of(self, app_id: str, kind: str | None = None) -> list[int]:
        return sorted(d for d, m in self.meta.items() if m.app_id == app_id and (kind is None or m.kind == kind))

    # -- scoring -------------------------------------------------------------

    def bm25_score(self, query_terms, doc_id: int, params: Bm25Params | None = None) -> float:
        self._require_frozen()
        p = params or self.params
        dl = float(self.doc_len(doc_id))
        score = 0.0
        for q in query_terms:
            f = self.term_freq(q, doc_id)
            if f == 0:
                continue
            norm = p.k1 * (1.0 - p.b + p.b * dl / self.avgdl)
            score += self.idf(q) * f * (p.k1 + 1.0) / (f + norm)
        return score

    def score_all(self, query_terms, params: Bm25Params | None = None) -> np.ndarray:
        """BM25 of every document, indexed by dense rank."""
        self._require_frozen()
        p = params or self.params
        scores = np.zeros(self.N)
        for q in query_terms:
            pl = self.postings.get(q)
            if pl is None:
                continue
            _kernels.bm25_accumulate(scores, pl.ranks, pl.tfs, self._doc_len, self.avgdl,
                                     float(p.k1), float(p.b), idf(self.N, len(pl)))
        return scores

    def search(self, query_terms, app_id=None, k=10, params: Bm25Params | None = None, kind=None):
        """Top-``k`` ``(doc_id, score)`` with score > 0, best first, ties by doc id."""
        self._require_frozen()
        if k <= 0:
            return []
        scores = self.score_all(query_terms, params)
        keep = scores > 0.0
        if app_id is not None:
            a = self._apps.get(app_id)
            if a is None:
                return []
            keep &= self._app_of == a
        if kind is not None:
            keep &= self._kind_of == DOC_KINDS.index(kind)
        cand = np.flatnonzero(keep)
        order = np.lexsort((self._ids[cand], -scores[cand]))[:k]
        return [(int(self._ids[cand[i]]), float(scores[cand[i]])) for i in order]

    # -- snippets ------------------------------------------------------------

    def extract_snippet(self, doc_id: int, query_terms, max_tokens=50) -> Snippet:
        meta = self._doc(doc_id)
        weights = {q: self.idf(q) for q in set(query_terms)}
        start, end, score = best_window(meta.tokens, weights, max_tokens)
        return Snippet(tuple(meta.tokens[start:end]), int(doc_id), meta.kind, score, start)

    def retrieve_context(self, review_tokens, app_id, n_reviews=4, n_descriptions=1, max_tokens=50,
                         params: Bm25Params | None = None) -> list[Snippet]:
        """Snippets from the best reviews of ``app_id`` followed by its description.

        Review documents whose tokens equal the query exactly are skipped, so
        a review never retrieves itself.
        """
        self._require_frozen()
        if app_id not in self._apps:
            raise IndexStateError(f"app {app_id!r} is not in the index")
        query = tuple(review_tokens)
        out = []
        if n_reviews > 0:
            hits = self.search(query, app_id, k=self.N, params=params, kind="review")
            for doc_id, _ in hits:
                if self.meta[doc_id].tokens == query:
                    continue
                out.append(self.extract_snippet(doc_id, query, max_tokens))
                if len(out) == n_reviews:
                    break
        if n_descriptions > 0:
            descs = self.docs_of(app_id, "description")
            ranked = {d: s for d, s in self.search(query, app_id, k=self.N, params=params, kind="description")}
            descs.sort(key=lambda d: (-ranked.get(d, 0.0), d))
            for doc_id in descs[:n_descriptions]:
                out.append(self.extract_snippet(doc_id, query, max_tokens))
        return out

    def stats(self) -> dict:
        return {"N": self.N, "terms": len(self.postings) if self.frozen else len(self._building),
                "avgdl": self.avgdl, "apps": len(self.apps())}


def sentence_spans(tokens, max_tokens=50):
    """Sentence boundaries as ``(start, end)``; long sentences are chunked."""
    spans = []
    start = 0
    for i, t in enumerate(tokens):
        if t in SENTENCE_END:
            spans.append((start, i + 1))
            start = i + 1
    if start < len(tokens):
        spans.append((start, len(tokens)))
    out = []
    for s, e in spans:
        while e - s > max_tokens:
            out.append((s, s + max_tokens))
            s += max_tokens
        out.append((s, e))
    return out


def best_window(tokens, weights, max_tokens=50):
    """Best run of whole sentences within ``max_tokens``.

    A window scores the summed weight of the distinct query terms it holds.
    Ties go to the window with fewer sentences, then the earlier start.
    Returns ``(start, end, score)``.
    """
    spans = sentence_spans(tokens, max_tokens)
    if not spans:
        return 0, 0, 0.0
    best = None
    for i in range(len(spans)):
        seen = set()
        for j in range(i, len(spans)):
            if spans[j][1] - spans[i][0] > max_tokens:
                break
            seen.update(t for t in tokens[spans[j][0] : spans[j][1]] if t in weights)
            # fsum is order-independent, so equal term sets tie exactly
            score = math.fsum(weights[t] for t in seen)
            key = (-score, j - i, spans[i][0])
            if best is None or key < best[0]:
                best = (key, spans[i][0], spans[j][1], score)
    return best[1], best[2], best[3]


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

MAGIC = b"ARIDX\x00\x00\x00"
VERSION = 1


def _varint(n: int, out: io.BytesIO):
    if n < 0:
        raise ValueError("varints encode non-negative integers only")
    while True:
        byte = n & 0x7F
        n >>= 7
        if n:
            out.write(bytes((byte | 0x80,)))
        else:
            out.write(bytes((byte,)))
            return


def _read_varint(buf: memoryview, pos: int):
    shift = result = 0
    while True:
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7


def _write_str(s: str, out: io.BytesIO):
    raw = s.encode("utf-8")
    _varint(len(raw), out)
    out.write(raw)


def _read_str(buf: memoryview, pos: int):
    n, pos = _read_varint(buf, pos)
    return bytes(buf[pos : pos + n]).decode("utf-8"), pos + n


def encode_varints(values) -> bytes:
    out = io.BytesIO()
    for v in values:
        _varint(int(v), out)
    return out.getvalue()


def decode_varints(raw: bytes, count: int):
    buf = memoryview(raw)
    pos = 0
    vals = []
    for _ in range(count):
        v, pos = _read_varint(buf, pos)
        vals.append(v)
    return vals


def save_index(index: InvertedIndex, path) -> None:
    """Write a frozen index.

    Layout: magic, u32 version, header ``<QddQ`` (N, avgdl, k1, b) and
    term count; the sorted term dictionary (length-prefixed UTF-8, document
    frequency, byte offset into the postings section); the postings section
    (per term: delta-encoded doc ids then term frequencies, all varints);
    the doc-meta table (doc id, app id, kind, tokens).
    """
    index._require_frozen()
    terms = sorted(index.postings)
    postings = io.BytesIO()
    offsets = []
    for t in terms:
        pl = index.postings[t]
        offsets.append(postings.tell())
        prev = 0
        for d in pl.doc_ids.tolist():
            _varint(d - prev, postings)
            prev = d
        for f in pl.tfs.tolist():
            _varint(f, postings)
    dictionary = io.BytesIO()
    for t, off in zip(terms, offsets):
        _write_str(t, dictionary)
        _varint(len(index.postings[t]), dictionary)
        _varint(off, dictionary)
    docs = io.BytesIO()
    for d in index._ids.tolist():
        m = index.meta[d]
        _varint(d, docs)
        _write_str(m.app_id, docs)
        docs.write(bytes((DOC_KINDS.index(m.kind),)))
        _varint(len(m.tokens), docs)
        for tok in m.tokens:
            _write_str(tok, docs)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<QdddQ", index.N, index.avgdl, index.params.k1, index.params.b, len(terms)))
        for section in (dictionary, postings, docs):
            blob = section.getvalue()
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)


def load_index(path) -> InvertedIndex:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise IndexStateError(f"{path}: not an index file")
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != VERSION:
        raise IndexStateError(f"{path}: unsupported index version {version}")
    N, avgdl, k1, b, n_terms = struct.unpack_from("<QdddQ", raw, 12)
    pos = 12 + struct.calcsize("<QdddQ")
    sections = []
    for _ in range(3):
        (n,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        sections.append(memoryview(raw)[pos : pos + n])
        pos += n
    dictionary, postings, docs = sections

    index = InvertedIndex()
    p = 0
    for _ in range(N):
        d, p = _read_varint(docs, p)
        app, p = _read_str(docs, p)
        kind = DOC_KINDS[docs[p]]
        p += 1
        n_tok, p = _read_varint(docs, p)
        toks = []
        for _ in range(n_tok):
            t, p = _read_str(docs, p)
            toks.append(t)
        index.add_document(d, app, kind, toks)
    index.freeze(Bm25Params(k1, b))

    # cross-check the stored postings against the rebuilt ones
    p = 0
    for _ in range(n_terms):
        term, p = _read_str(dictionary, p)
        df, p = _read_varint(dictionary, p)
        off, p = _read_varint(dictionary, p)
        q = off
        ids = []
        prev = 0
        for _ in range(df):
            delta, q = _read_varint(postings, q)
            prev += delta
            ids.append(prev)
        tfs = []
        for _ in range(df):
            f, q = _read_varint(postings, q)
            tfs.append(f)
        pl = index.postings.get(term)
        if pl is None or pl.doc_ids.tolist() != ids or pl.tfs.tolist() != tfs:
            raise IndexStateError(f"{path}: postings for {term!r} disagree with stored documents")
    if abs(index.avgdl - avgdl) > 1e-9:
        raise IndexStateError(f"{path}: stored avgdl {avgdl} != recomputed {index.avgdl}")
    return index
