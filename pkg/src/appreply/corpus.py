"""Raw record ingestion, text cleaning, vocabulary and dataset splits."""

from __future__ import annotations

import json
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from .numcore.rng import make_rng

log = logging.getLogger(__name__)

PAD, UNK, SOS, EOS = "<pad>", "<unk>", "<sos>", "<eos>"
NUMBER, URL, EMAIL = "<number>", "<url>", "<email>"
SALUTATION, SIGNATURE = "<salutation>", "<signature>"
RESERVED = (PAD, UNK, SOS, EOS, NUMBER, URL, EMAIL, SALUTATION, SIGNATURE)
PAD_ID, UNK_ID, SOS_ID, EOS_ID = 0, 1, 2, 3
PLACEHOLDERS = frozenset(RESERVED)

KINDS = ("review", "response", "description", "category")

DEFAULT_VOCAB_CAP = 10_000
REVIEW_LEN, SNIPPET_LEN, CATEGORY_LEN, RATING_LEN, RESPONSE_LEN = 75, 50, 4, 1, 120
MIN_WORDS = 4
ENGLISH_THRESHOLD = 0.2

# exact proportions of the published 530,872 / 19,511 / 19,480 split
REFERENCE_SPLIT = (530_872, 19_511, 19_480)
DEFAULT_RATIOS = tuple(Fraction(k, sum(REFERENCE_SPLIT)) for k in REFERENCE_SPLIT)


class DataError(ValueError):
    """Malformed input record or dataset."""


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

_PLACEHOLDER_RE = "|".join(re.escape(t) for t in RESERVED)
_TOKEN_RE = re.compile(
    rf"""
    (?P<ph>{_PLACEHOLDER_RE})
  | (?P<url>(?:https?://|www\.)\S+?)(?=[.,!?;:)\]'"]*(?:\s|$))
  | (?P<email>[\w.+-]+@[\w-]+(?:\.[\w-]+)+)
  | (?P<num>\d+)
  | (?P<word>[^\W\d_]+(?:'[^\W\d_]+)*)
  | (?P<punct>\S)
    """,
    re.VERBOSE,
)


def normalize_text(raw: str) -> list[str]:
    """Lowercase, mask numbers/emails/URLs, and split punctuation off words.

    >>> normalize_text("Visit https://x.co NOW!!")
    ['visit', '<url>', 'now', '!', '!']
    """
    out = []
    for m in _TOKEN_RE.finditer(raw.lower()):
        kind = m.lastgroup
        if kind == "url":
            out.append(URL)
        elif kind == "email":
            out.append(EMAIL)
        elif kind == "num":
            out.append(NUMBER)
        else:
            out.append(m.group())
    return out


def is_word(token: str) -> bool:
    return token not in PLACEHOLDERS and token[:1].isalpha()


def _load_english_words() -> frozenset:
    text = resources.files("appreply").joinpath("data/english_1000.txt").read_text("utf-8")
    return frozenset(w for w in text.split() if w)


ENGLISH_WORDS = _load_english_words()


def english_fraction(tokens) -> float:
    words = [t for t in tokens if is_word(t)]
    if not words:
        return 0.0
    return sum(w in ENGLISH_WORDS for w in words) / len(words)


# ---------------------------------------------------------------------------
# greeting / sign-off masking
# ---------------------------------------------------------------------------

GREETINGS = frozenset({"hi", "hello", "dear", "hey", "greetings", "hiya", "howdy"})
TIMED_GREETINGS = frozenset({"morning", "afternoon", "evening"})
ADDRESS_WORDS = frozenset(
    {"there", "all", "everyone", "team", "user", "customer", "friend", "sir", "madam", "guys", "folks"}
)
SIGNOFFS = (
    ("best", "regards"),
    ("kind", "regards"),
    ("warm", "regards"),
    ("best", "wishes"),
    ("thank", "you"),
    ("regards",),
    ("thanks",),
    ("cheers",),
    ("sincerely",),
    ("cordially",),
)
SIGNOFF_FILLER = frozenset(
    {"the", "team", "support", "dev", "devs", "developer", "developers", "staff", "customer",
     "service", "care", "from", "and", "your", "our", "crew", "squad", "app", "-", ",", ".", "!"}
)
_SIGNOFF_WINDOW = 8


def _is_name_like(token: str) -> bool:
    return is_word(token) and token not in ENGLISH_WORDS


def _mask_salutation(tokens: list[str]) -> list[str]:
    if not tokens:
        return tokens
    i = 0
    if tokens[0] in GREETINGS:
        i = 1
    elif tokens[0] == "good" and len(tokens) > 1 and tokens[1] in TIMED_GREETINGS:
        i = 2
    else:
        return tokens
    if i < len(tokens) and tokens[i] in ADDRESS_WORDS:
        i += 1
    elif i + 1 < len(tokens) and _is_name_like(tokens[i]) and tokens[i + 1] in {",", "!"}:
        i += 1
    while i < len(tokens) and tokens[i] in {",", "!", "."}:
        i += 1
    return [SALUTATION] + tokens[i:]


def _mask_signature(tokens: list[str]) -> list[str]:
    n = len(tokens)
    lo = max(0, n - _SIGNOFF_WINDOW)
    for start in range(lo, n):
        for phrase in SIGNOFFS:
            end = start + len(phrase)
            if tuple(tokens[start:end]) != phrase:
                continue
            tail = tokens[end:]
            if all(t in SIGNOFF_FILLER or _is_name_like(t) for t in tail):
                return tokens[:start] + [SIGNATURE]
    return tokens


@dataclass
class CleanRecord:
    app_id: str
    kind: str
    tokens: list
    rating: int | None = None
    link_id: str | None = None
    record_id: str | None = None


def mask_and_filter(tokens, kind, app_id="", rating=None, link_id=None, record_id=None,
                    english_threshold=ENGLISH_THRESHOLD, min_words=MIN_WORDS):
    """Mask greetings and sign-offs; drop short or non-English texts.

    Returns ``None`` for a rejected text. Descriptions and categories are
    neither length- nor language-filtered.
    """
    toks = list(tokens)
    if kind in ("review", "response"):
        toks = _mask_signature(_mask_salutation(toks))
        if sum(is_word(t) for t in toks) < min_words:
            return None
        if english_fraction(toks) < english_threshold:
            return None
    elif not toks:
        return None
    return CleanRecord(app_id=app_id, kind=kind, tokens=toks, rating=rating, link_id=link_id,
                       record_id=record_id)


# ---------------------------------------------------------------------------
# raw records
# ---------------------------------------------------------------------------


@dataclass
class RawRecord:
    app_id: str
    kind: str
    text: str
    rating: int | None = None
    link_id: str | None = None
    record_id: str | None = None

    @classmethod
    def from_dict(cls, obj: dict, default_id: str | None = None) -> "RawRecord":
        try:
            app_id = str(obj["app_id"])
            kind = obj["kind"]
            text = obj["text"]
        except (KeyError, TypeError) as exc:
            raise DataError(f"missing field {exc}") from None
        if kind not in KINDS:
            raise DataError(f"unknown kind {kind!r}")
        if not isinstance(text, str) or not text.strip():
            raise DataError("text must be a non-empty string")
        rating = obj.get("rating")
        link_id = obj.get("link_id")
        if kind == "review":
            if not isinstance(rating, int) or isinstance(rating, bool) or not 1 <= rating <= 5:
                raise DataError(f"review rating must be an integer 1-5, got {rating!r}")
        elif rating is not None:
            raise DataError(f"rating is only allowed on reviews, found on {kind}")
        if kind == "response":
            if link_id is None:
                raise DataError("response without link_id")
            link_id = str(link_id)
        elif link_id is not None:
            raise DataError(f"link_id is only allowed on responses, found on {kind}")
        rid = obj.get("id", default_id)
        return cls(app_id, kind, text, rating, link_id, None if rid is None else str(rid))


def read_raw_records(path):
    """Yield RawRecords from a JSON-lines file, skipping malformed lines.

    Reviews without an ``id`` field are identified by their 0-based line
    number, which is what a response's ``link_id`` then refers to.
    """
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                yield RawRecord.from_dict(obj, default_id=str(lineno))
            except (json.JSONDecodeError, DataError) as exc:
                log.warning("%s:%d: skipping malformed record (%s)", path, lineno + 1, exc)


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------


class Vocab:
    def __init__(self, tokens):
        self.token_of = list(tokens)
        if tuple(self.token_of[: len(RESERVED)]) != RESERVED:
            raise DataError("vocabulary must start with the reserved tokens")
        self.id_of = {t: i for i, t in enumerate(self.token_of)}
        if len(self.id_of) != len(self.token_of):
            raise DataError("duplicate token in vocabulary")

    @property
    def size(self) -> int:
        return len(self.token_of)

    def __len__(self):
        return len(self.token_of)

    def __contains__(self, token):
        return token in self.id_of

    def encode(self, tokens):
        return [self.id_of.get(t, UNK_ID) for t in tokens]

    def decode(self, ids, strip=True):
        out = []
        for i in ids:
            i = int(i)
            if strip and i == EOS_ID:
                break
            if strip and i in (PAD_ID, SOS_ID):
                continue
            out.append(self.token_of[i])
        return out

    def save(self, path):
        Path(path).write_text("\n".join(self.token_of) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


def build_vocab(token_streams, cap=DEFAULT_VOCAB_CAP) -> Vocab:
    """Reserved tokens, then corpus tokens by frequency (ties: lexicographic)."""
    if cap <= len(RESERVED):
        raise ValueError(f"vocabulary cap must exceed {len(RESERVED)}")
    counts = Counter()
    for toks in token_streams:
        counts.update(t for t in toks if t not in PLACEHOLDERS)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    room = cap - len(RESERVED)
    return Vocab(list(RESERVED) + [t for t, _ in ranked[:room]])


# ---------------------------------------------------------------------------
# encoded pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Limits:
    review: int = REVIEW_LEN
    response: int = RESPONSE_LEN
    category: int = CATEGORY_LEN
    snippet: int = SNIPPET_LEN


@dataclass
class ReviewResponsePair:
    app_id: str
    rating: int
    review_ids: np.ndarray
    response_ids: np.ndarray
    category_ids: np.ndarray
    review_tokens: list = field(default_factory=list)
    response_tokens: list = field(default_factory=list)
    category_tokens: list = field(default_factory=list)

    @property
    def review_len(self) -> int:
        return int(np.count_nonzero(self.review_ids != PAD_ID))

    @property
    def response_len(self) -> int:
        """Number of target positions, including the terminal ``<eos>``."""
        return int(np.count_nonzero(self.response_ids != PAD_ID))

    def to_json(self) -> dict:
        return {
            "app_id": self.app_id,
            "rating": self.rating,
            "review_ids": self.review_ids.tolist(),
            "response_ids": self.response_ids.tolist(),
            "category_ids": self.category_ids.tolist(),
            "review_tokens": self.review_tokens,
            "response_tokens": self.response_tokens,
            "category_tokens": self.category_tokens,
        }

    @classmethod
    def from_json(cls, obj) -> "ReviewResponsePair":
        return cls(
            app_id=obj["app_id"],
            rating=int(obj["rating"]),
            review_ids=np.array(obj["review_ids"], dtype=np.int64),
            response_ids=np.array(obj["response_ids"], dtype=np.int64),
            category_ids=np.array(obj["category_ids"], dtype=np.int64),
            review_tokens=list(obj.get("review_tokens", [])),
            response_tokens=list(obj.get("response_tokens", [])),
            category_tokens=list(obj.get("category_tokens", [])),
        )


def _pad(ids, length):
    return np.array(list(ids)[:length] + [PAD_ID] * max(0, length - len(ids)), dtype=np.int64)


def encode_pair(review: CleanRecord, response: CleanRecord, vocab: Vocab, limits=Limits(),
                category_tokens=()) -> ReviewResponsePair:
    """Id-encode a pair, truncating and tail-padding to the fixed limits."""
    if review.rating is None:
        raise DataError(f"review of app {review.app_id!r} has no rating")
    if review.app_id != response.app_id:
        raise DataError(f"app mismatch: review {review.app_id!r}, response {response.app_id!r}")
    rev = review.tokens[: limits.review]
    resp = response.tokens[: limits.response - 1]
    cat = list(category_tokens)[: limits.category]
    return ReviewResponsePair(
        app_id=review.app_id,
        rating=int(review.rating),
        review_ids=_pad(vocab.encode(rev), limits.review),
        response_ids=_pad(vocab.encode(resp) + [EOS_ID], limits.response),
        category_ids=_pad(vocab.encode(cat), limits.category),
        review_tokens=list(rev),
        response_tokens=list(resp),
        category_tokens=cat,
    )


def write_pairs(path, pairs):
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps(p.to_json(), ensure_ascii=False) + "\n")


def read_pairs(path):
    with open(path, encoding="utf-8") as fh:
        return [ReviewResponsePair.from_json(json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


@dataclass
class DatasetSplit:
    train: list
    valid: list
    test: list
    seed: int


def split_sizes(n: int, ratios) -> tuple[int, int, int]:
    r_train, r_valid, r_test = (Fraction(r) if isinstance(r, Fraction) else Fraction(r).limit_denominator(10**9)
                                for r in ratios)
    n_valid = round(n * r_valid)
    n_test = round(n * r_test)
    # every split non-empty when possible, so training always has a validation set
    if r_valid > 0 and n_valid == 0:
        n_valid = 1
    if r_test > 0 and n_test == 0:
        n_test = 1
    return n - n_valid - n_test, n_valid, n_test


def split_dataset(pairs, ratios=DEFAULT_RATIOS, seed=0) -> DatasetSplit:
    pairs = list(pairs)
    if abs(float(sum(ratios)) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {float(sum(ratios))}")
    if len(pairs) < 3:
        raise DataError(f"need at least 3 pairs to split, got {len(pairs)}")
    n_train, n_valid, _ = split_sizes(len(pairs), ratios)
    order = make_rng(seed).permutation(len(pairs))
    train = [pairs[i] for i in order[:n_train]]
    valid = [pairs[i] for i in order[n_train : n_train + n_valid]]
    test = [pairs[i] for i in order[n_train + n_valid :]]
    return DatasetSplit(train, valid, test, seed)


# ---------------------------------------------------------------------------
# whole-corpus preprocessing
# ---------------------------------------------------------------------------


@dataclass
class Preprocessed:
    pairs: list  # (review CleanRecord, response CleanRecord)
    unpaired_reviews: list
    descriptions: dict  # app_id -> token list
    categories: dict  # app_id -> token list
    counts: dict


def preprocess_records(records, english_threshold=ENGLISH_THRESHOLD, min_words=MIN_WORDS) -> Preprocessed:
    """Clean every record and join responses to their reviews."""
    reviews = {}
    review_order = []
    responses = []
    descriptions = {}
    categories = {}
    counts = Counter()
    for rec in records:
        toks = normalize_text(rec.text)
        clean = mask_and_filter(toks, rec.kind, rec.app_id, rec.rating, rec.link_id, rec.record_id,
                                english_threshold=english_threshold, min_words=min_words)
        counts[f"{rec.kind}_in"] += 1
        if clean is None:
            counts[f"{rec.kind}_dropped"] += 1
            continue
        if rec.kind == "review":
            key = (rec.app_id, rec.record_id)
            if key in reviews:
                log.warning("duplicate review id %s for app %s; keeping the first", rec.record_id, rec.app_id)
                counts["review_dropped"] += 1
                continue
            reviews[key] = clean
            review_order.append(key)
        elif rec.kind == "response":
            responses.append(clean)
        elif rec.kind == "description":
            descriptions.setdefault(rec.app_id, []).extend(clean.tokens)
        else:
            categories.setdefault(rec.app_id, clean.tokens)

    pairs = []
    answered = set()
    for resp in responses:
        key = (resp.app_id, resp.link_id)
        rev = reviews.get(key)
        if rev is None or key in answered:
            counts["response_unmatched"] += 1
            continue
        answered.add(key)
        pairs.append((rev, resp))
    unpaired = [reviews[k] for k in review_order if k not in answered]
    counts["pairs"] = len(pairs)
    counts["unpaired_reviews"] = len(unpaired)
    return Preprocessed(pairs, unpaired, descriptions, categories, dict(counts))


def group_by_app(items, key=lambda x: x.app_id):
    out = defaultdict(list)
    for it in items:
        out[key(it)].append(it)
    return out
