"""Central finite-difference comparison against analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradReport:
    max_rel_error: float
    tol: float
    per_param: dict = field(default_factory=dict)
    checked: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def rel_error(analytic, numeric, floor=1e-6):
    """Elementwise |a - n| / max(|a|, |n|, floor).

    The floor keeps entries whose true gradient is ~0 from dividing
    roundoff by roundoff.
    """
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def finite_diff_check(f, params, tol=1e-4, step=1e-5, max_entries=None, rng=None, floor=1e-6):
    """Compare ``backward`` gradients of ``f()`` with central differences.

    ``f`` takes no arguments and returns a scalar :class:`Tensor` built from
    ``params`` (a dict name -> Tensor, or a list of tensors). With
    ``max_entries`` set, at most that many coordinates are probed per
    parameter, chosen by ``rng``.

    The relative-error floor is ``floor * max(1, |f|)``: a central difference
    carries roughly ``eps * |f| / step`` of roundoff, so gradients below that
    scale cannot be resolved at any tolerance.
    """
    if not isinstance(params, dict):
        params = {f"p{i}": p for i, p in enumerate(params)}
    for p in params.values():
        p.grad = np.zeros_like(p.data)
    loss = f()
    floor = floor * max(1.0, abs(loss.item()))
    backward(loss)
    analytic = {k: p.grad.copy() for k, p in params.items()}

    report = GradReport(max_rel_error=0.0, tol=tol)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            gen = rng if rng is not None else np.random.default_rng(0)
            idx = np.sort(gen.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = f().item()
            flat[i] = orig - step
            down = f().item()
            flat[i] = orig
            numeric[j] = (up - down) / (2.0 * step)
        err = rel_error(analytic[name].reshape(-1)[idx], numeric, floor) if idx.size else np.zeros(0)
        worst = float(err.max()) if err.size else 0.0
        report.per_param[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
        report.checked += int(idx.size)
    for p in params.values():
        p.grad = np.zeros_like(p.data)
    return report


def check_function(fn, point, tol=1e-4, step=1e-5):
    """Check a function of one array argument at ``point``."""
    x = Tensor(np.array(point, dtype=np.float64), requires_grad=True)
    return finite_diff_check(lambda: fn(x), {"x": x}, tol=tol, step=step)
