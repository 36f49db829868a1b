"""Corpus BLEU with clipped n-gram precisions, and ROUGE-L over token lists.

All scores are on a 0-100 scale. Tokens are compared as opaque strings (or
ints), so placeholder tokens such as ``<url>`` count like any other word.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels


@dataclass
class EvalReport:
    bleu4: float
    p1: float
    p2: float
    p3: float
    p4: float
    rouge_l: float
    pairs: int

    def to_dict(self):
        return asdict(self)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _check_aligned(candidates, references):
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")


def clipped_counts(candidates, references, n):
    """Pooled (matched, total) n-gram counts, clipped per pair."""
    _check_aligned(candidates, references)
    matched = total = 0
    for cand, ref in zip(candidates, references):
        c = _ngrams(list(cand), n)
        if not c:
            continue
        r = _ngrams(list(ref), n)
        matched += sum(min(k, r[g]) for g, k in c.items())
        total += sum(c.values())
    return matched, total


def modified_ngram_precision(candidates, references, n) -> float:
    matched, total = clipped_counts(candidates, references, n)
    return 100.0 * matched / total if total else 0.0


def brevity_penalty(cand_len: int, ref_len: int) -> float:
    if cand_len == 0:
        return 0.0
    if cand_len >= ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / cand_len)


def bleu(candidates, references, max_n=4, sentence_average=False) -> float:
    """Corpus BLEU-``max_n`` (uniform weights, standard brevity penalty).

    With ``sentence_average`` the per-pair BLEU values are averaged instead of
    pooling counts over the corpus.
    """
    _check_aligned(candidates, references)
    if not candidates:
        return 0.0
    if sentence_average:
        return float(np.mean([bleu([c], [r], max_n) for c, r in zip(candidates, references)]))
    log_sum = 0.0
    for n in range(1, max_n + 1):
        matched, total = clipped_counts(candidates, references, n)
        if matched == 0:
            return 0.0
        log_sum += math.log(matched / total)
    c = sum(len(x) for x in candidates)
    r = sum(len(x) for x in references)
    return 100.0 * brevity_penalty(c, r) * math.exp(log_sum / max_n)


def _as_ids(a, b):
    table = {}
    ia = np.array([table.setdefault(t, len(table)) for t in a], dtype=np.int64)
    ib = np.array([table.setdefault(t, len(table)) for t in b], dtype=np.int64)
    return ia, ib


def lcs_length(a, b) -> int:
    ia, ib = _as_ids(a, b)
    return _kernels.lcs_length(ia, ib)


def rouge_l_pair(candidate, reference) -> float:
    """ROUGE-L F1 of one pair, in [0, 1]."""
    if not candidate or not reference:
        return 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return 2.0 * p * r / (p + r)


def rouge_l(candidates, references) -> float:
    _check_aligned(candidates, references)
    if not candidates:
        return 0.0
    return 100.0 * float(np.mean([rouge_l_pair(c, r) for c, r in zip(candidates, references)]))


def evaluate_corpus(candidates, references, sentence_average=False) -> EvalReport:
    p = [modified_ngram_precision(candidates, references, n) for n in range(1, 5)]
    return EvalReport(
        bleu4=bleu(candidates, references, 4, sentence_average=sentence_average),
        p1=p[0],
        p2=p[1],
        p3=p[2],
        p4=p[3],
        rouge_l=rouge_l(candidates, references),
        pairs=len(candidates),
    )
