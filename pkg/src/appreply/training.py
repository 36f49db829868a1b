"""Joint end-to-end training with scheduled feeding and validation selection."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .corpus import EOS_ID
from .decoding import greedy_decode_batch
from .evalmetrics import bleu
from .model import Example, ModelConfig, ResponseModel, make_batch, make_example
from .numcore import tensor as T
from .numcore.checkpoint import load_into, read_checkpoint, save_checkpoint
from .numcore.optim import adam_step
from .numcore.rng import child_seed, make_rng
from .numcore.tensor import no_grad

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class TrainingDiverged(ArithmeticError):
    """Raised when the training loss stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    epochs: int = 25
    lr: float = 0.01
    tf_probability: float = 0.5
    clip_norm: float = 5.0
    seed: int = 0
    max_steps: int | None = None  # stop after this many optimizer steps
    val_max_len: int | None = None  # decode length cap for validation (default: response_len)
    val_batch_size: int = 256

    def __post_init__(self):
        if not 0.0 <= self.tf_probability <= 1.0:
            raise ValueError("tf_probability must lie in [0, 1]")
        for name in ("batch_size", "epochs", "lr", "clip_norm", "val_batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_steps is not None and self.max_steps <= 0:
            raise ValueError("max_steps must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)
    val_bleu: list = field(default_factory=list)
    best_epoch: int = -1
    checkpoint_path: str | None = None
    steps: int = 0

    @property
    def best_bleu(self) -> float:
        return self.val_bleu[self.best_epoch] if self.best_epoch >= 0 else float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Dataset:
    train: list
    valid: list


def nll_loss(distributions, target_ids, mask=None) -> float:
    """Mean of ``-log p(target)`` over real target positions.

    ``distributions`` has shape (..., m, V) and ``target_ids`` (..., m).
    Probabilities below 1e-12 are floored (with a warning) so the result
    stays finite.
    """
    p = np.asarray(distributions, dtype=np.float64)
    t = np.asarray(target_ids, dtype=np.int64)
    if p.shape[:-1] != t.shape:
        raise ValueError(f"distributions {p.shape} do not match targets {t.shape}")
    mask = np.ones(t.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("no target positions")
    picked = np.take_along_axis(p, t[..., None], axis=-1)[..., 0][mask]
    if np.any(picked < PROB_FLOOR):
        log.warning("target probability below %g floored in nll_loss", PROB_FLOOR)
        picked = np.maximum(picked, PROB_FLOOR)
    return float(-np.mean(np.log(picked)))


def scheduled_decode_train(model: ResponseModel, batch, rng, p_tf: float, training=True):
    """Training loss with per-step, per-example scheduled feeding.

    ``rng`` drives both the feeding coin flips and dropout masks.
    """
    return model.sequence_nll(batch, training=training, p_tf=p_tf, coin_rng=rng, rng=rng)


def validation_bleu(model: ResponseModel, examples, config: TrainConfig) -> float:
    max_len = config.val_max_len or model.config.response_len
    cands, refs = [], []
    for i in range(0, len(examples), config.val_batch_size):
        chunk = examples[i:i + config.val_batch_size]
        for ex, out in zip(chunk, greedy_decode_batch(model, chunk, max_len)):
            cands.append(_body(out))
            refs.append(_body(ex.target))
    return bleu(cands, refs)


def _body(ids):
    ids = [int(i) for i in ids]
    return ids[: ids.index(EOS_ID)] if EOS_ID in ids else ids


def mean_loss(model: ResponseModel, examples, batch_size=256) -> float:
    """Teacher-forced token-mean NLL with dropout off."""
    total = 0.0
    count = 0
    with no_grad():
        for i in range(0, len(examples), batch_size):
            batch = make_batch(examples[i:i + batch_size])
            n = int(batch.target_mask.sum())
            total += model.sequence_nll(batch, reduce="sum").item()
            count += n
    return total / count


def save_model(path, model: ResponseModel, metadata: dict | None = None) -> None:
    meta = dict(metadata or {})
    meta["model_config"] = model.config.to_dict()
    save_checkpoint(path, model.params, meta)


def load_model(path) -> tuple[ResponseModel, dict]:
    """Rebuild a model from a checkpoint; shapes are validated against its config."""
    _, meta, _ = read_checkpoint(path)
    cfg = ModelConfig.from_dict(meta["model_config"])
    model = ResponseModel(cfg)
    meta = load_into(path, model.params)
    return model, meta


def _check_examples(examples, name):
    if not examples:
        raise ValueError(f"{name} split is empty")
    for ex in examples:
        if ex.target is None or len(ex.target) == 0:
            raise ValueError(f"{name} example without a target")


def train(dataset: Dataset, model: ResponseModel, config: TrainConfig = TrainConfig(),
          checkpoint_path=None, log_path=None, metadata: dict | None = None) -> TrainReport:
    """Adam training with gradient clipping and best-validation-BLEU selection.

    Every epoch reshuffles the training examples with a seeded generator,
    then evaluates greedy BLEU-4 on the validation split. The parameters of
    the best epoch (latest one on ties) are written to ``checkpoint_path``.
    """
    _check_examples(dataset.train, "train")
    _check_examples(dataset.valid, "validation")
    shuffle_rng = make_rng(child_seed(config.seed, 1))
    step_rng = make_rng(child_seed(config.seed, 2))
    report = TrainReport(checkpoint_path=str(checkpoint_path) if checkpoint_path else None)
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    best = -math.inf
    best_params = None
    try:
        for epoch in range(config.epochs):
            order = shuffle_rng.permutation(len(dataset.train))
            losses = []
            for i in range(0, len(order), config.batch_size):
                batch = make_batch([dataset.train[j] for j in order[i:i + config.batch_size]])
                loss = scheduled_decode_train(model, batch, step_rng, config.tf_probability)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingDiverged(f"loss became {value} at epoch {epoch}, step {report.steps}")
                T.backward(loss)
                model.params.clip_grad_norm(config.clip_norm)
                adam_step(model.params, config.lr)
                report.steps += 1
                losses.append(value)
                if config.max_steps is not None and report.steps >= config.max_steps:
                    break
            report.epoch_losses.append(float(np.mean(losses)))
            score = validation_bleu(model, dataset.valid, config)
            report.val_bleu.append(score)
            if score >= best:
                best = score
                report.best_epoch = epoch
                best_params = {k: t.data.copy() for k, t in model.params}
                if checkpoint_path:
                    save_model(checkpoint_path, model, {**(metadata or {}), "epoch": epoch, "val_bleu": score,
                                                        "train_config": config.to_dict()})
            line = {"epoch": epoch, "loss": report.epoch_losses[-1], "val_bleu": score, "steps": report.steps}
            log.info("epoch %d loss %.4f val_bleu %.2f", epoch, line["loss"], score)
            if log_file:
                log_file.write(json.dumps(line) + "\n")
                log_file.flush()
            if config.max_steps is not None and report.steps >= config.max_steps:
                break
    finally:
        if log_file:
            log_file.close()
    if best_params is not None:
        for k, t in model.params:
            t.data[...] = best_params[k]
    return report


def examples_from_pairs(pairs, snippet_lists, config: ModelConfig) -> list[Example]:
    return [make_example(p, s, config) for p, s in zip(pairs, snippet_lists)]
