"""Command line: preprocess, index, train, generate, evaluate, synthgen.

Exit codes: 0 success, 1 usage or configuration error, 2 data or I/O
error, 3 numeric failure (diverging training).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import ConfigError, Experiment
from .corpus import DataError
from .decoding import detokenize
from .numcore.checkpoint import CheckpointError
from .retrieval import IndexStateError
from .synth import SynthConfig, generate, write_jsonl
from .training import TrainingDiverged

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("appreply")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p, index=False, checkpoint=False):
    p.add_argument("--config", help="key = value experiment file")
    p.add_argument("--seed", type=int)
    if index:
        p.add_argument("--index-path", required=True)
    if checkpoint:
        p.add_argument("--checkpoint", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="appreply", description="Review-response synthesis pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="clean, pair, split and encode a raw corpus")
    p.add_argument("in_path")
    p.add_argument("out_dir")
    _common(p)

    p = sub.add_parser("index", help="build the BM25 index of descriptions and reviews")
    p.add_argument("corpus_dir")
    _common(p, index=True)

    p = sub.add_parser("train", help="train a model (with optional ablations)")
    p.add_argument("corpus_dir")
    p.add_argument("--out-dir", default="run", help="directory for checkpoint, report and log")
    _common(p, index=True)
    p.add_argument("--no-rating", action="store_true")
    p.add_argument("--no-category", action="store_true")
    p.add_argument("--no-description", action="store_true")
    p.add_argument("--no-reviews", action="store_true")
    p.add_argument("--no-snippets", action="store_true", help="same as --no-description --no-reviews")
    p.add_argument("--fusion-mode", choices=("literal", "weighted_columns"))

    p = sub.add_parser("generate", help="respond to one review")
    _common(p, index=True, checkpoint=True)
    p.add_argument("--app-id", required=True)
    p.add_argument("--review", required=True, help="raw review text")
    p.add_argument("--rating", type=int, default=3, choices=range(1, 6))
    p.add_argument("--beam", type=int)

    p = sub.add_parser("evaluate", help="decode a split and score it")
    p.add_argument("corpus_dir")
    _common(p, index=True, checkpoint=True)
    p.add_argument("--split", default="test", choices=pipeline.SPLITS)
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--beam", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--sentence-average", action="store_true", help="average per-pair BLEU instead of corpus BLEU")

    p = sub.add_parser("synthgen", help="write a synthetic corpus with planted snippet facts")
    p.add_argument("out_path")
    p.add_argument("--apps", type=int, default=20)
    p.add_argument("--reviews-per-app", type=int, default=200)
    p.add_argument("--fact-vocab", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _experiment(args, **extra) -> Experiment:
    overrides = {"seed": args.seed, **extra}
    return Experiment.load(args.config, overrides)


def _print_json(obj):
    print(json.dumps(obj, sort_keys=True))


def cmd_preprocess(args) -> int:
    exp = _experiment(args)
    counts = pipeline.preprocess(args.in_path, args.out_dir, exp.split, exp.seed, exp.vocab_cap)
    _print_json(counts)
    return EXIT_OK


def cmd_index(args) -> int:
    stats = pipeline.index_corpus(args.corpus_dir, args.index_path)
    if stats["missing_descriptions"]:
        print("warning: apps without a description: " + ", ".join(stats["missing_descriptions"]),
              file=sys.stderr)
    _print_json(stats)
    return EXIT_OK


def cmd_train(args) -> int:
    ablate = {}
    if args.no_rating:
        ablate["use_rating"] = False
    if args.no_category:
        ablate["use_category"] = False
    if args.no_description or args.no_snippets:
        ablate["use_description"] = False
    if args.no_reviews or args.no_snippets:
        ablate["use_reviews"] = False
    exp = _experiment(args, fusion_mode=args.fusion_mode, **ablate)
    train_cfg = exp.train_config()
    exp.model_config(16)  # validate model keys before the corpus is loaded
    report = pipeline.run_train(args.corpus_dir, args.index_path, exp.model_config, train_cfg, args.out_dir)
    _print_json(report.to_dict())
    return EXIT_OK


def cmd_generate(args) -> int:
    exp = _experiment(args, beam=args.beam)
    tokens = pipeline.respond(args.checkpoint, args.index_path, args.review, args.app_id, args.rating, exp.beam)
    print(detokenize(tokens))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    exp = _experiment(args, beam=args.beam)
    report = pipeline.run_evaluate(args.checkpoint, args.index_path, args.corpus_dir, args.split, exp.beam,
                                   args.out, args.max_len, args.sentence_average)
    _print_json(report.to_dict())
    return EXIT_OK


def cmd_synthgen(args) -> int:
    try:
        cfg = SynthConfig(n_apps=args.apps, reviews_per_app=args.reviews_per_app, fact_vocab=args.fact_vocab,
                          seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    records = generate(cfg)
    write_jsonl(args.out_path, records)
    _print_json({"records": len(records), "apps": cfg.n_apps})
    return EXIT_OK


COMMANDS = {
    "preprocess": cmd_preprocess,
    "index": cmd_index,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "synthgen": cmd_synthgen,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, IndexStateError, CheckpointError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
