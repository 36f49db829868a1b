"""Fused review-response generator.

Four encoders feed one attentional LSTM decoder:

* the review (embedding + stacked LSTM), whose states the decoder attends to
  and whose final states initialize the decoder;
* retrieved snippets, each encoded independently and concatenated, then
  collapsed against the review by the fusion layer;
* the app category (embedding + LSTM, final state);
* the rating (a 5-row lookup table).

All computation is batched as (B, T, d) arrays internally. The per-example
functions ``encode_review``, ``fuse_snippets``, ``attend`` etc. expose the
same math with one column per token (d x n), which is what the tests and
callers that inspect intermediate states use.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .corpus import CATEGORY_LEN, PAD_ID, RESPONSE_LEN, REVIEW_LEN, SNIPPET_LEN, SOS_ID
from .numcore import tensor as T
from .numcore.optim import ParamStore
from .numcore.rng import make_rng
from .numcore.tensor import Tensor

FUSION_MODES = ("literal", "weighted_columns")
ENCODERS = ("review", "snippet", "category")
N_RATINGS = 5


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d: int = 128
    E: int = 128
    layers: int = 2
    dropout: float = 0.2
    review_len: int = REVIEW_LEN
    snippet_len: int = SNIPPET_LEN
    n_snippets: int = 5
    category_len: int = CATEGORY_LEN
    response_len: int = RESPONSE_LEN
    fusion_mode: str = "literal"
    use_rating: bool = True
    use_category: bool = True
    use_reviews: bool = True
    use_description: bool = True
    init_scale: float = 0.08
    seed: int = 0

    def __post_init__(self):
        if self.d <= 0 or self.E <= 0:
            raise ValueError("d and E must be positive")
        if self.layers < 1:
            raise ValueError("layers must be at least 1")
        if self.vocab_size < 4:
            raise ValueError("vocab_size must cover the reserved tokens")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}")
        for name in ("review_len", "snippet_len", "category_len", "response_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_snippets < 0:
            raise ValueError("n_snippets must be non-negative")

    @property
    def use_snippets(self) -> bool:
        return self.n_snippets > 0 and (self.use_reviews or self.use_description)

    def snippet_plan(self) -> tuple[int, int]:
        """(#review snippets, #description snippets) to retrieve per example."""
        if not self.use_snippets:
            return 0, 0
        n_desc = 1 if self.use_description else 0
        n_rev = self.n_snippets - n_desc if self.use_reviews else 0
        return n_rev, n_desc

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**obj)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass
class Example:
    """One model input with ids already stripped of padding."""

    review: np.ndarray
    rating: int
    snippets: list = field(default_factory=list)
    category: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    target: np.ndarray | None = None  # response ids ending in <eos>
    app_id: str = ""


def _strip(ids) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    return ids[ids != PAD_ID]


def make_example(pair, snippet_ids, config: ModelConfig) -> Example:
    """Build an :class:`Example` from an encoded pair and snippet id lists."""
    snippets = []
    if config.use_snippets:
        for s in snippet_ids:
            s = _strip(s)[: config.snippet_len]
            if s.size:
                snippets.append(s)
            if len(snippets) == config.n_snippets:
                break
    target = _strip(pair.response_ids) if pair.response_ids is not None else None
    return Example(
        review=_strip(pair.review_ids)[: config.review_len],
        rating=int(pair.rating),
        snippets=snippets,
        category=_strip(pair.category_ids)[: config.category_len],
        target=target,
        app_id=getattr(pair, "app_id", ""),
    )


@dataclass
class Batch:
    review_ids: np.ndarray  # (B, n)
    review_mask: np.ndarray
    snippet_ids: np.ndarray  # (B*S, L)
    snippet_mask: np.ndarray
    concat_index: np.ndarray  # (B, U) flat positions into (B*S*L)
    concat_mask: np.ndarray
    category_ids: np.ndarray  # (B, c)
    category_mask: np.ndarray
    ratings: np.ndarray  # (B,) in 1..5
    target_ids: np.ndarray | None = None  # (B, m)
    target_mask: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.review_ids.shape[0]


def _pad_rows(rows, width):
    out = np.full((len(rows), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, r in enumerate(rows):
        out[i, : r.size] = r
        mask[i, : r.size] = True
    return out, mask


def make_batch(examples) -> Batch:
    examples = list(examples)
    if not examples:
        raise ValueError("empty batch")
    for ex in examples:
        if ex.review.size == 0:
            raise ValueError("review has no tokens")
        if not 1 <= ex.rating <= N_RATINGS:
            raise ValueError(f"rating {ex.rating} outside 1..{N_RATINGS}")
    B = len(examples)
    review_ids, review_mask = _pad_rows([e.review for e in examples], max(e.review.size for e in examples))
    cat_ids, cat_mask = _pad_rows([e.category for e in examples], max(1, max(e.category.size for e in examples)))

    S = max(len(e.snippets) for e in examples)
    L = max([s.size for e in examples for s in e.snippets], default=1)
    flat = [np.zeros(0, dtype=np.int64)] * (B * S)
    for b, e in enumerate(examples):
        for j, s in enumerate(e.snippets):
            flat[b * S + j] = s
    snip_ids, snip_mask = _pad_rows(flat, L) if S else (np.zeros((0, 1), np.int64), np.zeros((0, 1), bool))
    U = max(sum(s.size for s in e.snippets) for e in examples)
    concat_index = np.zeros((B, U), dtype=np.int64)
    concat_mask = np.zeros((B, U), dtype=bool)
    for b, e in enumerate(examples):
        pos = [(b * S + j) * L + t for j, s in enumerate(e.snippets) for t in range(s.size)]
        concat_index[b, : len(pos)] = pos
        concat_mask[b, : len(pos)] = True

    target_ids = target_mask = None
    if all(e.target is not None for e in examples):
        target_ids, target_mask = _pad_rows([e.target for e in examples], max(e.target.size for e in examples))
    return Batch(review_ids, review_mask, snip_ids, snip_mask, concat_index, concat_mask,
                 cat_ids, cat_mask, np.array([e.rating for e in examples], dtype=np.int64),
                 target_ids, target_mask)


# ---------------------------------------------------------------------------
# encoded state containers
# ---------------------------------------------------------------------------


@dataclass
class EncodedSequence:
    rows: Tensor  # (n, d): one row per token
    final: list  # per layer (h, c), each (d,)

    @property
    def H(self) -> np.ndarray:
        return self.rows.data.T


@dataclass
class EncodedSnippets:
    rows: Tensor  # (u, d)
    boundaries: list  # [(start, end)) per snippet

    @property
    def H(self) -> np.ndarray:
        return self.rows.data.T

    @property
    def u(self) -> int:
        return self.rows.shape[0]


@dataclass
class FusionState:
    S: Tensor  # (u, n)
    z: Tensor  # (u,)
    h_hat: Tensor  # (d,)
    H_hat_rows: Tensor  # (u, d)

    @property
    def H_hat(self) -> np.ndarray:
        return self.H_hat_rows.data.T


@dataclass
class AttentionState:
    weights: Tensor
    context: Tensor


@dataclass
class SideEncodings:
    h_c: Tensor
    h_g: Tensor


@dataclass
class DecoderState:
    h: list  # per layer, (B, d)
    c: list
    last_ids: np.ndarray


@dataclass
class Memory:
    """Encoder outputs the decoder reads at every step."""

    Hx: Tensor  # (B, n, d)
    x_mask: np.ndarray
    Kx: Tensor  # review keys projected by the attention's W2
    Hr: Tensor | None  # (B, U, d) fused snippet matrix, None when u = 0 everywhere
    r_mask: np.ndarray
    Kr: Tensor | None
    h_c: Tensor
    h_g: Tensor
    init: list  # per layer (h, c)
    z: Tensor | None = None
    S: Tensor | None = None

    def select(self, rows) -> "Memory":
        """Re-index the batch (beam expansion); the result carries no graph."""
        rows = np.asarray(rows, dtype=np.int64)

        def pick(t):
            return None if t is None else Tensor(t.data[rows])

        return Memory(pick(self.Hx), self.x_mask[rows], pick(self.Kx), pick(self.Hr), self.r_mask[rows],
                      pick(self.Kr), pick(self.h_c), pick(self.h_g),
                      [(pick(h), pick(c)) for h, c in self.init], pick(self.z), pick(self.S))


# ---------------------------------------------------------------------------
# functional pieces
# ---------------------------------------------------------------------------


def _split_hc(hc, d):
    return T.getitem(hc, (slice(None), slice(0, d))), T.getitem(hc, (slice(None), slice(d, None)))


def run_lstm(x, mask, layer_params, dropout=0.0, rng=None, training=False):
    """Stacked LSTM over a padded batch.

    ``x`` is (B, T, in), ``mask`` (B, T) marks real tokens. At padded steps
    the state is carried forward unchanged, so each row's final state is the
    state after its last real token. Returns the top layer's (B, T, d) output
    and a per-layer list of final ``(h, c)``.
    """
    mask = np.asarray(mask, dtype=bool)
    B, steps = mask.shape
    inp = x
    finals = []
    for li, (W, U, b) in enumerate(layer_params):
        d = U.shape[0]
        if li > 0:
            inp = T.dropout(inp, dropout, rng, training)
        zx = T.add(T.matmul(inp, W), b)
        cols = T.unbind(zx, axis=1)
        h = Tensor(np.zeros((B, d)))
        c = Tensor(np.zeros((B, d)))
        outs = []
        for t in range(steps):
            hn, cn = _split_hc(T.lstm_pointwise(T.add(cols[t], T.matmul(h, U)), c), d)
            m = mask[:, t]
            if m.all():
                h, c = hn, cn
            else:
                h = T.where(m[:, None], hn, h)
                c = T.where(m[:, None], cn, c)
            outs.append(h)
        finals.append((h, c))
        inp = T.stack(outs, axis=1)
    return inp, finals


def fusion_batched(R, r_mask, X, x_mask, w_s, mode="literal"):
    """Snippet fusion for a batch.

    ``R`` (B, U, d) snippet states, ``X`` (B, n, d) review states. The
    similarity of snippet position b and review position k is
    ``w_s . [r ; x ; r*x]``. Row maxima over review positions are softmaxed
    over snippet positions to give ``z``; ``h_hat`` is the z-weighted sum of
    snippet states. Returns ``(S, z, h_hat, H_hat)``.
    """
    if mode not in FUSION_MODES:
        raise ValueError(f"unknown fusion mode {mode!r}")
    B, U, d = R.shape
    n = X.shape[1]
    if w_s.shape != (3 * d,):
        raise ValueError(f"w_s must have length 3d = {3 * d}, got {w_s.shape}")
    w1 = T.getitem(w_s, slice(0, d))
    w2 = T.getitem(w_s, slice(d, 2 * d))
    w3 = T.getitem(w_s, slice(2 * d, 3 * d))
    a = T.reshape(T.matvec(R, w1), (B, U, 1))
    c = T.reshape(T.matvec(X, w2), (B, 1, n))
    cross = T.bmm(T.mul(R, w3), T.transpose(X, (0, 2, 1)))
    S = T.add(T.add(cross, a), c)
    row_max = T.masked_max(S, np.asarray(x_mask, bool)[:, None, :])
    z = T.masked_softmax(row_max, r_mask)
    h_hat = T.weighted_sum(z, R)
    if mode == "literal":
        H_hat = T.broadcast_to(T.reshape(h_hat, (B, 1, d)), (B, U, d))
    else:
        H_hat = T.mul(R, T.reshape(z, (B, U, 1)))
    return S, z, h_hat, H_hat


def attention_batched(K, Kp, mask, h_prev, W1, v):
    """Additive attention ``v . tanh(W1 h' + W2 h_k)`` with ``Kp = K W2`` precomputed.

    Rows whose mask is all false get zero weights and a zero context.
    """
    B, m, d = K.shape
    q = T.reshape(T.matmul(h_prev, W1), (B, 1, d))
    e = T.matvec(T.tanh(T.add(Kp, q)), v)
    a = T.masked_softmax(e, mask)
    return a, T.weighted_sum(a, K)


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------


class ResponseModel:
    """Parameters plus the encode / step / forward passes."""

    def __init__(self, config: ModelConfig, params: ParamStore | None = None):
        self.config = config
        if params is None:
            params = self._init_params()
        self.params = params
        self._check_shapes()

    # -- parameters -------------------------------------------------------

    def param_shapes(self) -> dict:
        cfg = self.config
        d, E, V = cfg.d, cfg.E, cfg.vocab_size
        shapes = {"embedding": (V, E)}
        for enc in ENCODERS:
            for li in range(cfg.layers):
                width = E if li == 0 else d
                shapes[f"{enc}.l{li}.W"] = (width, 4 * d)
                shapes[f"{enc}.l{li}.U"] = (d, 4 * d)
                shapes[f"{enc}.l{li}.b"] = (4 * d,)
        shapes["rating.table"] = (N_RATINGS, d)
        shapes["fusion.w"] = (3 * d,)
        for att in ("attn_review", "attn_snippet"):
            shapes[f"{att}.W1"] = (d, d)
            shapes[f"{att}.W2"] = (d, d)
            shapes[f"{att}.v"] = (d,)
        for li in range(cfg.layers):
            width = E + 4 * d if li == 0 else d
            shapes[f"decoder.l{li}.W"] = (width, 4 * d)
            shapes[f"decoder.l{li}.U"] = (d, 4 * d)
            shapes[f"decoder.l{li}.b"] = (4 * d,)
        shapes["out.W"] = (3 * d, V)
        shapes["out.b"] = (V,)
        return shapes

    def _init_params(self) -> ParamStore:
        rng = make_rng(self.config.seed)
        s = self.config.init_scale
        store = ParamStore()
        for name, shape in self.param_shapes().items():
            store.add(name, rng.uniform(-s, s, size=shape))
        return store

    def _check_shapes(self):
        want = self.param_shapes()
        have = {k: t.shape for k, t in self.params}
        if set(want) != set(have):
            raise ValueError(f"parameter names differ: missing {sorted(set(want) - set(have))}, "
                             f"extra {sorted(set(have) - set(want))}")
        for k, shp in want.items():
            if tuple(have[k]) != tuple(shp):
                raise ValueError(f"parameter {k} has shape {have[k]}, expected {shp}")

    def _layers(self, prefix):
        p = self.params
        return [(p[f"{prefix}.l{i}.W"], p[f"{prefix}.l{i}.U"], p[f"{prefix}.l{i}.b"])
                for i in range(self.config.layers)]

    # -- encoding ---------------------------------------------------------

    def _embed(self, ids):
        return T.take_rows(self.params["embedding"], ids)

    def encode(self, batch: Batch, training=False, rng=None) -> Memory:
        cfg = self.config
        p = self.params
        B = batch.size
        d = cfg.d
        drop = cfg.dropout

        x_emb = T.dropout(self._embed(batch.review_ids), drop, rng, training)
        Hx, finals = run_lstm(x_emb, batch.review_mask, self._layers("review"), drop, rng, training)

        h_c = Tensor(np.zeros((B, d)))
        if cfg.use_category and batch.category_mask.any():
            c_emb = T.dropout(self._embed(batch.category_ids), drop, rng, training)
            _, cfin = run_lstm(c_emb, batch.category_mask, self._layers("category"), drop, rng, training)
            h_c = cfin[-1][0]
        h_g = T.take_rows(p["rating.table"], batch.ratings - 1) if cfg.use_rating else Tensor(np.zeros((B, d)))

        Hr = Kr = z = S = None
        r_mask = batch.concat_mask
        if cfg.use_snippets and r_mask.shape[1] > 0:
            s_emb = T.dropout(self._embed(batch.snippet_ids), drop, rng, training)
            Hs, _ = run_lstm(s_emb, batch.snippet_mask, self._layers("snippet"), drop, rng, training)
            flat = T.reshape(Hs, (-1, d))
            R = T.take_rows(flat, batch.concat_index)
            S, z, _, Hr = fusion_batched(R, r_mask, Hx, batch.review_mask, p["fusion.w"], cfg.fusion_mode)
            Kr = T.matmul(Hr, p["attn_snippet.W2"])
        else:
            r_mask = np.zeros((B, 0), dtype=bool)
        Kx = T.matmul(Hx, p["attn_review.W2"])
        return Memory(Hx, batch.review_mask, Kx, Hr, r_mask, Kr, h_c, h_g, finals, z, S)

    def initial_state(self, memory: Memory) -> DecoderState:
        B = memory.Hx.shape[0]
        return DecoderState([h for h, _ in memory.init], [c for _, c in memory.init],
                            np.full(B, SOS_ID, dtype=np.int64))

    # -- decoding ---------------------------------------------------------

    def step(self, memory: Memory, state: DecoderState | None, y_prev, training=False, rng=None):
        """One decoder step. Returns ``(logits (B, V), new_state, contexts)``."""
        if state is None:
            raise ValueError("decoder state is not initialized")
        cfg = self.config
        p = self.params
        d = cfg.d
        y_prev = np.asarray(y_prev, dtype=np.int64)
        top = state.h[-1]
        B = y_prev.shape[0]

        a_x, c_x = attention_batched(memory.Hx, memory.Kx, memory.x_mask, top,
                                     p["attn_review.W1"], p["attn_review.v"])
        if memory.Hr is not None:
            a_r, c_r = attention_batched(memory.Hr, memory.Kr, memory.r_mask, top,
                                         p["attn_snippet.W1"], p["attn_snippet.v"])
        else:
            a_r, c_r = None, Tensor(np.zeros((B, d)))

        inp = T.concat([self._embed(y_prev), c_x, c_r, memory.h_c, memory.h_g], axis=1)
        hs, cs = [], []
        for li, (W, U, b) in enumerate(self._layers("decoder")):
            if li > 0:
                inp = T.dropout(inp, cfg.dropout, rng, training)
            z = T.add(T.add(T.matmul(inp, W), T.matmul(state.h[li], U)), b)
            h, c = _split_hc(T.lstm_pointwise(z, state.c[li]), d)
            hs.append(h)
            cs.append(c)
            inp = h
        feat = T.concat([T.dropout(hs[-1], cfg.dropout, rng, training), c_x, c_r], axis=1)
        logits = T.add(T.matmul(feat, p["out.W"]), p["out.b"])
        return logits, DecoderState(hs, cs, y_prev), (a_x, c_x, a_r, c_r)

    def forward(self, batch: Batch, training=False, p_tf=1.0, coin_rng=None, rng=None):
        """Unroll the decoder over ``batch.target_ids``.

        At step i > 0 each example is fed its ground-truth previous token with
        probability ``p_tf`` and otherwise the argmax of its previous logits.
        Returns ``(logits list of (B, V), fed ids (B, m))``.
        """
        if batch.target_ids is None:
            raise ValueError("forward needs target ids")
        if not 0.0 <= p_tf <= 1.0:
            raise ValueError("p_tf must lie in [0, 1]")
        memory = self.encode(batch, training, rng)
        state = self.initial_state(memory)
        B, m = batch.target_ids.shape
        if p_tf >= 1.0:
            coins = np.ones((B, m), dtype=bool)
        elif p_tf <= 0.0:
            coins = np.zeros((B, m), dtype=bool)
        else:
            if coin_rng is None:
                raise ValueError("scheduled feeding needs coin_rng")
            coins = coin_rng.random((B, m)) < p_tf
        fed = np.empty((B, m), dtype=np.int64)
        y = np.full(B, SOS_ID, dtype=np.int64)
        logits = []
        for i in range(m):
            if i > 0:
                guess = np.argmax(logits[-1].data, axis=1)
                y = np.where(coins[:, i], batch.target_ids[:, i - 1], guess)
            fed[:, i] = y
            lg, state, _ = self.step(memory, state, y, training, rng)
            logits.append(lg)
        return logits, fed

    def sequence_nll(self, batch: Batch, training=False, p_tf=1.0, coin_rng=None, rng=None, reduce="mean"):
        """Negative log-likelihood of the targets (mean or sum over real tokens)."""
        logits, _ = self.forward(batch, training, p_tf, coin_rng, rng)
        logp = T.log_softmax(T.stack(logits, axis=1))
        picked = T.pick(logp, batch.target_ids)
        mask = batch.target_mask.astype(np.float64)
        total = T.scale(T.total(T.mul(picked, mask)), -1.0)
        if reduce == "sum":
            return total
        return T.scale(total, 1.0 / max(1.0, mask.sum()))


# ---------------------------------------------------------------------------
# per-example operations (column layout)
# ---------------------------------------------------------------------------


def _single(ids):
    ids = _strip(ids)
    return ids.reshape(1, -1), np.ones((1, ids.size), dtype=bool)


def encode_review(model: ResponseModel, ids) -> EncodedSequence:
    ids, mask = _single(ids)
    if ids.size == 0:
        raise ValueError("review has no tokens")
    if ids.max() >= model.config.vocab_size or ids.min() < 0:
        raise ValueError("token id outside the vocabulary")
    H, finals = run_lstm(model._embed(ids), mask, model._layers("review"))
    n, d = ids.shape[1], model.config.d
    return EncodedSequence(T.reshape(H, (n, d)), [(T.reshape(h, (d,)), T.reshape(c, (d,))) for h, c in finals])


def encode_snippets(model: ResponseModel, snippet_ids) -> EncodedSnippets:
    d = model.config.d
    rows, bounds, start = [], [], 0
    for s in snippet_ids:
        s = _strip(s)
        if s.size == 0:
            continue
        ids, mask = _single(s)
        H, _ = run_lstm(model._embed(ids), mask, model._layers("snippet"))
        rows.append(T.reshape(H, (s.size, d)))
        bounds.append((start, start + s.size))
        start += s.size
    out = T.concat(rows, axis=0) if rows else Tensor(np.zeros((0, d)))
    return EncodedSnippets(out, bounds)


def encode_side(model: ResponseModel, category_ids, rating) -> SideEncodings:
    if not 1 <= int(rating) <= N_RATINGS:
        raise ValueError(f"rating {rating} outside 1..{N_RATINGS}")
    d = model.config.d
    cat = _strip(category_ids)
    if cat.size:
        ids, mask = _single(cat)
        _, finals = run_lstm(model._embed(ids), mask, model._layers("category"))
        h_c = T.reshape(finals[-1][0], (d,))
    else:
        h_c = Tensor(np.zeros(d))
    h_g = T.take_rows(model.params["rating.table"], np.array(int(rating) - 1))
    return SideEncodings(h_c, h_g)


def fuse_snippets(HR_rows, Hx_rows, w_s, mode="literal") -> FusionState:
    """Fusion of one example; ``HR_rows`` is (u, d), ``Hx_rows`` is (n, d)."""
    HR_rows, Hx_rows, w_s = T.as_tensor(HR_rows), T.as_tensor(Hx_rows), T.as_tensor(w_s)
    u, d = HR_rows.shape
    n = Hx_rows.shape[0]
    if w_s.shape != (3 * d,):
        raise ValueError(f"w_s must have length 3d = {3 * d}, got {w_s.shape}")
    if u < 1 or n < 1:
        raise ValueError("fusion needs at least one snippet and one review position")
    S, z, h_hat, H_hat = fusion_batched(T.reshape(HR_rows, (1, u, d)), np.ones((1, u), bool),
                                        T.reshape(Hx_rows, (1, n, d)), np.ones((1, n), bool), w_s, mode)
    return FusionState(T.reshape(S, (u, n)), T.reshape(z, (u,)), T.reshape(h_hat, (d,)),
                       T.reshape(H_hat, (u, d)))


def attend(H_rows, h_prev, W1, W2, v, mask=None) -> AttentionState:
    """Additive attention of one query over ``H_rows`` (m, d)."""
    H_rows = T.as_tensor(H_rows)
    m, d = H_rows.shape
    if m < 1:
        raise ValueError("attention needs at least one source position")
    mask = np.ones(m, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("every attention position is masked")
    K = T.reshape(H_rows, (1, m, d))
    a, ctx = attention_batched(K, T.matmul(K, W2), mask[None, :], T.reshape(T.as_tensor(h_prev), (1, d)), W1, v)
    return AttentionState(T.reshape(a, (m,)), T.reshape(ctx, (d,)))


def decode_step(model: ResponseModel, memory: Memory, state: DecoderState | None, y_prev_id):
    """Vocabulary distribution for the next token plus the new state."""
    y = np.atleast_1d(np.asarray(y_prev_id, dtype=np.int64))
    logits, new_state, _ = model.step(memory, state, y)
    return T.softmax(logits), new_state


def forward(model: ResponseModel, example: Example, p_tf=1.0, coin_rng=None):
    """Per-step vocabulary distributions (m, V) for one example, no dropout."""
    logits, _ = model.forward(make_batch([example]), training=False, p_tf=p_tf, coin_rng=coin_rng)
    return np.stack([T.softmax(lg).data[0] for lg in logits])
