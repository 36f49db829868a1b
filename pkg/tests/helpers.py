"""Shared toy models for decoding tests."""

import itertools

import numpy as np


class TableStepper:
    """Autoregressive toy model: each prefix maps to a fixed random distribution.

    Token 0 plays the role of ``<eos>``; ``sos_id`` is a sentinel outside the
    vocabulary that is never emitted.
    """

    sos_id = -1
    eos_id = 0

    def __init__(self, V, seed, sharpness=2.0):
        self.V = V
        self.seed = seed
        self.sharpness = sharpness
        self.cache = {}

    def dist(self, prefix):
        if prefix not in self.cache:
            tag = [self.seed, len(prefix), *prefix]
            x = np.random.default_rng([t + 1 for t in tag]).normal(size=self.V) * self.sharpness
            m = x.max()
            self.cache[prefix] = x - m - np.log(np.exp(x - m).sum())
        return self.cache[prefix]

    def initial(self):
        return [()]

    def advance(self, state, y_prev):
        nxt = [p if y == self.sos_id else p + (int(y),) for p, y in zip(state, y_prev)]
        return np.array([self.dist(p) for p in nxt]), nxt

    def reorder(self, state, rows):
        return [state[r] for r in rows]


def enumerate_best(stepper, max_len):
    """Exhaustive search over every complete sequence up to ``max_len``."""
    best = None
    for n in range(1, max_len + 1):
        for seq in itertools.product(range(stepper.V), repeat=n):
            if stepper.eos_id in seq[:-1]:
                continue
            if n < max_len and seq[-1] != stepper.eos_id:
                continue
            score = 0.0
            for i, t in enumerate(seq):
                score += stepper.dist(seq[:i])[t]
            key = (-score, n, seq)
            if best is None or key < best:
                best = key
    return list(best[2]), -best[0]
