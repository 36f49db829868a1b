"""Float64 tensors with a tape-free reverse-mode gradient graph.

Each op returns a new :class:`Tensor` holding references to its parents and
a closure that pushes the output gradient back into them. ``backward`` runs
those closures in reverse topological order.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .. import _kernels

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Run ops without recording the graph (inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    # operator sugar for the few ops that read naturally infix
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    out = Tensor(data)
    if not _GRAD_ENABLED:
        return out
    live = tuple(p for p in parents if p.requires_grad)
    if live:
        out.requires_grad = True
        out.grad = None  # allocated lazily during backward
        out._parents = live
        out._backward = backward
    return out


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.data.shape)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every reachable leaf with d(loss)/d(leaf)."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            # interior nodes release their gradient once propagated
            node.grad = None


# ---------------------------------------------------------------------------
# elementwise and shape ops
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def scale(a, c: float):
    a = as_tensor(a)
    return _make(a.data * c, (a,), lambda g: _accum(a, g * c))


def tanh(a):
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: _accum(a, g * (1.0 - y * y)))


def sigmoid(a):
    a = as_tensor(a)
    y = 1.0 / (1.0 + np.exp(-a.data))
    return _make(y, (a,), lambda g: _accum(a, g * y * (1.0 - y)))


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: _accum(a, g * y))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: _accum(a, g / a.data))


def square(a):
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: _accum(a, 2.0 * g * a.data))


def total(a):
    """Sum of all entries, as a scalar tensor."""
    a = as_tensor(a)
    return _make(np.array(a.data.sum()), (a,), lambda g: _accum(a, np.broadcast_to(g, a.shape)))


def sum_axis(a, axis):
    a = as_tensor(a)

    def bw(g):
        _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _make(a.data.sum(axis=axis), (a,), bw)


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: _accum(a, g.reshape(a.shape)))


def transpose(a, axes=None):
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: _accum(a, np.transpose(g, inv)))


def broadcast_to(a, shape):
    a = as_tensor(a)
    return _make(np.broadcast_to(a.data, shape).copy(), (a,), lambda g: _accum(a, _unbroadcast(g, a.shape)))


def _is_basic(key):
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (slice, int)) or k is Ellipsis for k in parts)


def getitem(a, key):
    a = as_tensor(a)
    basic = _is_basic(key)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[key] += g
        else:
            np.add.at(full, key, g)
        _accum(a, full)

    return _make(a.data[key], (a,), bw)


def unbind(a, axis=1):
    """Split along ``axis`` into a list of views; backward writes slices in place."""
    a = as_tensor(a)
    outs = []
    for k in range(a.shape[axis]):
        idx = [slice(None)] * a.ndim
        idx[axis] = k
        idx = tuple(idx)

        def bw(g, idx=idx):
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[idx] += g

        outs.append(_make(a.data[idx], (a,), bw))
    return outs


def concat(parts, axis=-1):
    parts = [as_tensor(p) for p in parts]
    ax = axis % parts[0].ndim
    sizes = [p.shape[ax] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(lo, hi)
                _accum(p, g[tuple(idx)])

    return _make(np.concatenate([p.data for p in parts], axis=ax), parts, bw)


def stack(parts, axis=0):
    parts = [as_tensor(p) for p in parts]

    def bw(g):
        for k, p in enumerate(parts):
            if p.requires_grad:
                _accum(p, np.take(g, k, axis=axis))

    return _make(np.stack([p.data for p in parts], axis=axis), parts, bw)


def where(mask, a, b):
    """Select ``a`` where ``mask`` is true, else ``b``; mask is constant."""
    a, b = as_tensor(a), as_tensor(b)
    m = np.asarray(mask, dtype=bool)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(np.where(m, g, 0.0), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.where(m, 0.0, g), b.shape))

    return _make(np.where(m, a.data, b.data), (a, b), bw)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, w):
    """``a @ w`` with ``a`` of shape (..., k) and ``w`` of shape (k, m)."""
    a, w = as_tensor(a), as_tensor(w)
    if w.ndim != 2 or a.shape[-1] != w.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {w.shape}")

    def bw(g):
        if a.requires_grad:
            _accum(a, g @ w.data.T)
        if w.requires_grad:
            k = a.shape[-1]
            _accum(w, a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1]))

    return _make(a.data @ w.data, (a, w), bw)


def matvec(a, v):
    """``a @ v`` with ``a`` of shape (..., k) and ``v`` of shape (k,)."""
    a, v = as_tensor(a), as_tensor(v)
    if v.ndim != 1 or a.shape[-1] != v.shape[0]:
        raise ValueError(f"matvec shape mismatch {a.shape} @ {v.shape}")

    def bw(g):
        if a.requires_grad:
            _accum(a, g[..., None] * v.data)
        if v.requires_grad:
            _accum(v, (g[..., None] * a.data).reshape(-1, v.shape[0]).sum(axis=0))

    return _make(a.data @ v.data, (a, v), bw)


def bmm(a, b):
    """Batched ``a @ b`` for (B, p, k) and (B, k, q)."""
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, g @ np.swapaxes(b.data, 1, 2))
        if b.requires_grad:
            _accum(b, np.swapaxes(a.data, 1, 2) @ g)

    return _make(a.data @ b.data, (a, b), bw)


def weighted_sum(weights, values):
    """Per-batch convex combination: (B, m) x (B, m, d) -> (B, d)."""
    w, v = as_tensor(weights), as_tensor(values)

    def bw(g):
        if w.requires_grad:
            _accum(w, np.einsum("bmd,bd->bm", v.data, g))
        if v.requires_grad:
            _accum(v, w.data[:, :, None] * g[:, None, :])

    return _make(np.einsum("bm,bmd->bd", w.data, v.data), (w, v), bw)


def take_rows(table, ids):
    """Embedding lookup: rows of a (V, E) table at integer ``ids``."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        _accum(table, full)

    return _make(table.data[ids], (table,), bw)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


def softmax(x, axis=-1):
    x = as_tensor(x)
    if np.isnan(x.data).any():
        raise ValueError("softmax input contains NaN")
    if x.data.shape[axis] == 0:
        raise ValueError("softmax of an empty vector")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accum(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (x,), bw)


def masked_softmax(x, mask):
    """Softmax over the last axis restricted to ``mask``.

    Masked entries get weight exactly 0. A row with no valid entry yields an
    all-zero row; callers that must reject that case check before calling.
    """
    x = as_tensor(x)
    m = np.asarray(mask, dtype=bool)
    if np.isnan(x.data).any():
        raise ValueError("softmax input contains NaN")
    filled = np.where(m, x.data, -np.inf)
    top = filled.max(axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(m, np.exp(np.where(m, x.data, 0.0) - top), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    y = e / np.where(denom > 0.0, denom, 1.0)

    def bw(g):
        _accum(x, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _make(y, (x,), bw)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def bw(g):
        _accum(x, g - p * g.sum(axis=axis, keepdims=True))

    return _make(y, (x,), bw)


def masked_max(x, mask):
    """Max over the last axis among ``mask``-valid entries.

    Rows without a valid entry return 0 and pass no gradient.
    """
    x = as_tensor(x)
    m = np.asarray(mask, dtype=bool)
    m = np.broadcast_to(m, x.shape)
    filled = np.where(m, x.data, -np.inf)
    arg = filled.argmax(axis=-1)
    any_valid = m.any(axis=-1)
    y = np.where(any_valid, np.take_along_axis(x.data, arg[..., None], axis=-1)[..., 0], 0.0)

    def bw(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, arg[..., None], np.where(any_valid, g, 0.0)[..., None], axis=-1)
        _accum(x, full)

    return _make(y, (x,), bw)


def pick(logp, targets):
    """Gather ``logp[..., targets]`` along the last axis."""
    logp = as_tensor(logp)
    t = np.asarray(targets, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(logp.data)
        np.put_along_axis(full, t[..., None], g[..., None], axis=-1)
        _accum(logp, full)

    return _make(np.take_along_axis(logp.data, t[..., None], axis=-1)[..., 0], (logp,), bw)


# ---------------------------------------------------------------------------
# recurrent cell and regularization
# ---------------------------------------------------------------------------


def lstm_pointwise(z, c_prev):
    """Gate nonlinearities of an LSTM step.

    ``z`` holds the (B, 4d) pre-activations ordered input, forget, cell,
    output. Returns one (B, 2d) tensor ``[h | c]``.
    """
    z, c_prev = as_tensor(z), as_tensor(c_prev)
    h, c, acts, tc = _kernels.lstm_forward(
        np.ascontiguousarray(z.data), np.ascontiguousarray(c_prev.data)
    )
    d = c.shape[1]

    def bw(g):
        dh = np.ascontiguousarray(g[:, :d])
        dc = np.ascontiguousarray(g[:, d:])
        dz, dcp = _kernels.lstm_backward(dh, dc, acts, tc, np.ascontiguousarray(c_prev.data))
        _accum(z, dz)
        _accum(c_prev, dcp)

    return _make(np.concatenate([h, c], axis=1), (z, c_prev), bw)


def lstm_cell(x, h_prev, c_prev, W, U, b):
    """One LSTM step: returns ``(h, c)``.

    ``W`` is (input, 4d), ``U`` is (d, 4d) and ``b`` is (4d,).
    """
    x, h_prev, c_prev = as_tensor(x), as_tensor(h_prev), as_tensor(c_prev)
    d = c_prev.shape[-1]
    if W.shape[1] != 4 * d or U.shape != (d, 4 * d) or b.shape != (4 * d,):
        raise ValueError(
            f"LSTM weights {W.shape}, {U.shape}, {b.shape} do not match hidden size {d}"
        )
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"LSTM input width {x.shape[-1]} != {W.shape[0]}")
    if h_prev.shape[-1] != d:
        raise ValueError(f"h_prev width {h_prev.shape[-1]} != {d}")
    squeeze = x.ndim == 1
    if squeeze:
        x, h_prev, c_prev = (reshape(t, (1, -1)) for t in (x, h_prev, c_prev))
    z = add(add(matmul(x, W), matmul(h_prev, U)), b)
    hc = lstm_pointwise(z, c_prev)
    h, c = getitem(hc, (slice(None), slice(0, d))), getitem(hc, (slice(None), slice(d, None)))
    if squeeze:
        h, c = reshape(h, (d,)), reshape(c, (d,))
    return h, c


def dropout(x, rate: float, rng, training: bool):
    """Inverted dropout; identity when not training or ``rate`` is 0."""
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, keep)
