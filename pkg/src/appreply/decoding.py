"""Greedy and beam-search decoding.

Both decoders work against a small stepping protocol so they can drive the
neural model or a hand-built table model alike:

* ``initial()`` returns the state for a single empty hypothesis;
* ``advance(state, y_prev)`` takes one id per hypothesis row and returns
  ``(log-probs of shape (rows, V), new state)``;
* ``reorder(state, rows)`` selects / duplicates hypothesis rows.

Steppers also carry ``sos_id`` and ``eos_id``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import EOS_ID, PAD_ID, RESERVED, SOS_ID
from .model import DecoderState, Example, ResponseModel, make_batch
from .numcore import tensor as T
from .numcore.tensor import Tensor, no_grad

MAX_LEN = 120
NO_SPACE_BEFORE = {".", ",", "!", "?", ";", ":", ")", "]", "}", "%", "'", "n't", "'s", "'re", "'m", "'ll", "'ve", "'d"}
NO_SPACE_AFTER = {"(", "[", "{", "$", "#"}
BANNED = (PAD_ID, SOS_ID)  # never emitted at inference


def _inference_logp(logits) -> np.ndarray:
    z = np.array(logits.data, copy=True)
    z[:, list(BANNED)] = -np.inf
    return T.log_softmax(z).data


@dataclass(frozen=True)
class BeamConfig:
    B: int = 5
    max_len: int = MAX_LEN

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("beam width must be at least 1")
        if self.max_len < 1:
            raise ValueError("max_len must be at least 1")


@dataclass(frozen=True)
class Hypothesis:
    ids: tuple
    logp: float


class ModelStepper:
    """Adapter exposing a :class:`ResponseModel` on one example as a stepper."""

    sos_id = SOS_ID
    eos_id = EOS_ID

    def __init__(self, model: ResponseModel, example: Example):
        self.model = model
        self.vocab_size = model.config.vocab_size
        with no_grad():
            self.memory = model.encode(make_batch([example]))

    def initial(self):
        return self.memory, self.model.initial_state(self.memory)

    def advance(self, state, y_prev):
        memory, dec = state
        with no_grad():
            logits, dec, _ = self.model.step(memory, dec, np.asarray(y_prev, dtype=np.int64))
            logp = _inference_logp(logits)
        return logp, (memory, dec)

    def reorder(self, state, rows):
        memory, dec = state
        rows = np.asarray(rows, dtype=np.int64)
        if rows.size == memory.Hx.shape[0] and np.array_equal(rows, np.arange(rows.size)):
            return state
        return memory.select(rows), DecoderState([Tensor(h.data[rows]) for h in dec.h],
                                                 [Tensor(c.data[rows]) for c in dec.c], dec.last_ids[rows])


def _stepper(model, example):
    if isinstance(model, ResponseModel):
        if example is None:
            raise ValueError("decoding a ResponseModel needs an example")
        return ModelStepper(model, example)
    return model


def greedy_decode(model, example: Example | None = None, max_len: int = MAX_LEN) -> list[int]:
    """Emit the most probable token at every step (ties go to the lowest id).

    The returned ids end with ``<eos>`` unless ``max_len`` was reached first.
    """
    stepper = _stepper(model, example)
    state = stepper.initial()
    y = stepper.sos_id
    out = []
    for _ in range(max_len):
        logp, state = stepper.advance(state, [y])
        y = int(np.argmax(logp[0]))
        out.append(y)
        if y == stepper.eos_id:
            break
    return out


def greedy_decode_batch(model: ResponseModel, examples, max_len: int = MAX_LEN) -> list[list[int]]:
    """Greedy decoding of several examples in one batched unroll."""
    examples = list(examples)
    if not examples:
        return []
    with no_grad():
        memory = model.encode(make_batch(examples))
        state = model.initial_state(memory)
        B = len(examples)
        y = np.full(B, SOS_ID, dtype=np.int64)
        done = np.zeros(B, dtype=bool)
        outs = [[] for _ in range(B)]
        for _ in range(max_len):
            logits, state, _ = model.step(memory, state, y)
            y = np.argmax(_inference_logp(logits), axis=1)
            for b in np.flatnonzero(~done):
                outs[b].append(int(y[b]))
            done |= y == EOS_ID
            if done.all():
                break
    return outs


def _final_key(h: Hypothesis):
    return (-h.logp, len(h.ids), h.ids)


def beam_hypotheses(model, example: Example | None = None, config: BeamConfig = BeamConfig()) -> list[Hypothesis]:
    """All finished hypotheses, best first.

    Each live hypothesis proposes its top-B next tokens; the global top-B
    candidates by cumulative log-probability survive. Candidates ending in
    ``<eos>`` or reaching ``max_len`` retire to the pool. Scores are raw
    joint log-probabilities (no length normalization). Since every extension
    can only lower a score, search stops once the best retired hypothesis
    scores at least as high as every live one.
    """
    stepper = _stepper(model, example)
    sos, eos = stepper.sos_id, stepper.eos_id
    B = config.B
    state = stepper.initial()
    live = [Hypothesis((), 0.0)]
    pool: list[Hypothesis] = []
    for _ in range(config.max_len):
        prev = [h.ids[-1] if h.ids else sos for h in live]
        logp, state = stepper.advance(state, prev)
        cands = []
        for r, h in enumerate(live):
            row = logp[r]
            # top-B by log-prob, lowest id on ties
            for v in np.lexsort((np.arange(row.size), -row))[:B]:
                v = int(v)
                cands.append((-(h.logp + row[v]), -row[v], h.ids + (v,), r))
        cands.sort()
        rows, nxt = [], []
        for neg_total, _, ids, r in cands[:B]:
            hyp = Hypothesis(ids, -neg_total)
            if ids[-1] == eos or len(ids) >= config.max_len:
                pool.append(hyp)
            else:
                nxt.append(hyp)
                rows.append(r)
        if not nxt:
            break
        if pool and max(h.logp for h in pool) >= max(h.logp for h in nxt):
            break
        live = nxt
        state = stepper.reorder(state, rows)
    if not pool:
        pool = live
    return sorted(pool, key=_final_key)


def beam_search(model, example: Example | None = None, config: BeamConfig = BeamConfig()) -> list[int]:
    """Token ids of the highest joint-probability hypothesis found."""
    return list(beam_hypotheses(model, example, config)[0].ids)


def sequence_logp(stepper, ids) -> float:
    """Joint log-probability of ``ids`` under ``stepper`` (teacher forced)."""
    state = stepper.initial()
    total = 0.0
    y = stepper.sos_id
    for tok in ids:
        logp, state = stepper.advance(state, [y])
        total += float(logp[0, tok])
        y = tok
    return total


def detokenize(tokens) -> str:
    """Join tokens with spaces, re-attaching punctuation.

    Control tokens (pad, sos, eos) are dropped; other placeholders such as
    ``<url>`` are kept literally.
    """
    skip = {RESERVED[PAD_ID], RESERVED[SOS_ID], RESERVED[EOS_ID]}
    out = ""
    glue = True
    for tok in tokens:
        if tok in skip:
            continue
        if out and not glue and tok not in NO_SPACE_BEFORE:
            out += " "
        out += tok
        glue = tok in NO_SPACE_AFTER
    return out
