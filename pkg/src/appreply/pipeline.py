"""End-to-end steps shared by the command line and the acceptance suite.

A corpus directory produced by :func:`preprocess` holds::

    train.jsonl valid.jsonl test.jsonl   encoded review/response pairs
    unpaired.jsonl                       cleaned reviews without a response
    apps.json                            per-app description and category tokens
    vocab.txt  counts.json
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .corpus import (
    CleanRecord,
    DataError,
    Limits,
    Vocab,
    build_vocab,
    encode_pair,
    normalize_text,
    preprocess_records,
    read_pairs,
    read_raw_records,
    split_dataset,
    write_pairs,
)
from .decoding import BeamConfig, beam_search, greedy_decode_batch
from .evalmetrics import EvalReport, evaluate_corpus
from .model import Example, ModelConfig, ResponseModel, make_example
from .retrieval import InvertedIndex, load_index, save_index
from .training import Dataset, TrainConfig, TrainReport, load_model, train

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------------


def preprocess(in_path, out_dir, ratios, seed=0, vocab_cap=10_000, limits=Limits()) -> dict:
    """Clean, pair, split and encode a raw JSON-lines corpus; returns counts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pre = preprocess_records(read_raw_records(in_path))
    streams = [r.tokens for pair in pre.pairs for r in pair]
    streams += [r.tokens for r in pre.unpaired_reviews]
    streams += list(pre.descriptions.values()) + list(pre.categories.values())
    vocab = build_vocab(streams, vocab_cap)
    vocab.save(out / "vocab.txt")

    encoded = [encode_pair(rev, resp, vocab, limits, pre.categories.get(rev.app_id, ()))
               for rev, resp in pre.pairs]
    if len(encoded) >= 3:
        split = split_dataset(encoded, ratios, seed)
        parts = {"train": split.train, "valid": split.valid, "test": split.test}
    else:
        if encoded:
            log.warning("only %d pairs; everything goes to the training split", len(encoded))
        parts = {"train": encoded, "valid": [], "test": []}
    for name in SPLITS:
        write_pairs(out / f"{name}.jsonl", parts[name])
    with open(out / "unpaired.jsonl", "w", encoding="utf-8") as fh:
        for r in pre.unpaired_reviews:
            fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")
    apps = sorted(set(pre.descriptions) | set(pre.categories) | {p.app_id for p in encoded})
    _write_json(out / "apps.json", {a: {"description": pre.descriptions.get(a, []),
                                         "category": pre.categories.get(a, [])} for a in apps})
    counts = dict(pre.counts)
    counts.update({f"{k}_pairs": len(v) for k, v in parts.items()})
    counts["vocab"] = vocab.size
    _write_json(out / "counts.json", counts)
    return counts


# ---------------------------------------------------------------------------
# index
# ---------------------------------------------------------------------------


def build_index(corpus_dir) -> tuple[InvertedIndex, list]:
    """Index every app description and every cleaned review.

    Returns the frozen index and the ids of apps that lack a description.
    """
    corpus = Path(corpus_dir)
    apps = _read_json(corpus / "apps.json")
    index = InvertedIndex()
    doc = 0
    missing = []
    for app in sorted(apps):
        desc = apps[app]["description"]
        if desc:
            index.add_document(doc, app, "description", desc)
            doc += 1
        else:
            missing.append(app)
    for name in SPLITS:
        for p in read_pairs(corpus / f"{name}.jsonl"):
            index.add_document(doc, p.app_id, "review", p.review_tokens)
            doc += 1
    with open(corpus / "unpaired.jsonl", encoding="utf-8") as fh:
        for line in fh:
            r = CleanRecord(**json.loads(line))
            index.add_document(doc, r.app_id, "review", r.tokens)
            doc += 1
    if doc == 0:
        raise DataError("corpus has no documents to index")
    index.freeze()
    return index, missing


def index_corpus(corpus_dir, index_path) -> dict:
    index, missing = build_index(corpus_dir)
    if missing:
        log.warning("apps without a description: %s", ", ".join(missing))
    save_index(index, index_path)
    return {**index.stats(), "missing_descriptions": missing}


# ---------------------------------------------------------------------------
# examples
# ---------------------------------------------------------------------------


def snippets_for(index: InvertedIndex, review_tokens, app_id, config: ModelConfig) -> list[list[str]]:
    n_rev, n_desc = config.snippet_plan()
    if n_rev == 0 and n_desc == 0:
        return []
    hits = index.retrieve_context(review_tokens, app_id, n_reviews=n_rev, n_descriptions=n_desc,
                                  max_tokens=config.snippet_len)
    return [list(s.tokens) for s in hits]


def pair_examples(pairs, index: InvertedIndex, vocab: Vocab, config: ModelConfig) -> list[Example]:
    out = []
    for p in pairs:
        snips = [vocab.encode(s) for s in snippets_for(index, p.review_tokens, p.app_id, config)]
        out.append(make_example(p, snips, config))
    return out


def load_split(corpus_dir, name):
    return read_pairs(Path(corpus_dir) / f"{name}.jsonl")


# ---------------------------------------------------------------------------
# train / evaluate / generate
# ---------------------------------------------------------------------------


def run_train(corpus_dir, index_path, model_config_fn, train_config: TrainConfig, out_dir) -> TrainReport:
    """Train on ``corpus_dir``; ``model_config_fn(vocab_size)`` builds the model config."""
    corpus = Path(corpus_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab = Vocab.load(corpus / "vocab.txt")
    cfg = model_config_fn(vocab.size)
    index = load_index(index_path)
    train_ex = pair_examples(load_split(corpus, "train"), index, vocab, cfg)
    valid_ex = pair_examples(load_split(corpus, "valid"), index, vocab, cfg)
    apps = _read_json(corpus / "apps.json")
    meta = {"vocab": vocab.token_of, "categories": {a: v["category"] for a, v in apps.items()}}
    model = ResponseModel(cfg)
    report = train(Dataset(train_ex, valid_ex), model, train_config,
                   checkpoint_path=out / "model.ckpt", log_path=out / "train_log.jsonl", metadata=meta)
    _write_json(out / "report.json", report.to_dict())
    return report


def decode_examples(model: ResponseModel, examples, beam: int, max_len=None) -> list[list[int]]:
    max_len = max_len or model.config.response_len
    if beam == 1:
        return greedy_decode_batch(model, examples, max_len)
    cfg = BeamConfig(B=beam, max_len=max_len)
    return [beam_search(model, ex, cfg) for ex in examples]


def run_evaluate(checkpoint, index_path, corpus_dir, split="test", beam=5, out_path=None,
                 max_len=None, sentence_average=False) -> EvalReport:
    model, meta = load_model(checkpoint)
    vocab = Vocab(meta["vocab"])
    index = load_index(index_path)
    pairs = load_split(corpus_dir, split)
    if not pairs:
        raise DataError(f"split {split!r} is empty")
    examples = pair_examples(pairs, index, vocab, model.config)
    outs = decode_examples(model, examples, beam, max_len)
    cands = [vocab.decode(o) for o in outs]
    refs = [p.response_tokens for p in pairs]
    report = evaluate_corpus(cands, refs, sentence_average=sentence_average)
    if out_path:
        _write_json(out_path, report.to_dict())
    return report


def respond(checkpoint, index_path, review_text, app_id, rating=3, beam=5) -> list[str]:
    """Respond to one raw review of ``app_id``; returns response tokens."""
    model, meta = load_model(checkpoint)
    vocab = Vocab(meta["vocab"])
    index = load_index(index_path)
    if app_id not in index.apps():
        raise DataError(f"app {app_id!r} is not in the index")
    tokens = normalize_text(review_text)[: model.config.review_len]
    if not tokens:
        raise DataError("review text has no tokens")
    snips = [vocab.encode(s) for s in snippets_for(index, tokens, app_id, model.config)]
    cat = meta.get("categories", {}).get(app_id, [])
    ex = Example(review=np.array(vocab.encode(tokens), dtype=np.int64), rating=int(rating),
                 snippets=[np.array(s, dtype=np.int64) for s in snips if s],
                 category=np.array(vocab.encode(cat[: model.config.category_len]), dtype=np.int64))
    ids = decode_examples(model, [ex], beam)[0]
    return vocab.decode(ids)
