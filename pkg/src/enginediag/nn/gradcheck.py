"""Finite-difference verification of backpropagated gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .layers import Parameter


def grad_check(loss_fn: Callable[[], float], params: list[Parameter],
               eps: float = 1e-4, max_entries: int = 24,
               rng=None) -> float:
    """Compare stored analytic gradients against central differences.

    `loss_fn` must rerun the full deterministic forward pass (dropout
    disabled) and return the scalar loss; each parameter's `.grad` must
    already hold the backpropagated gradient for that same pass.  Up to
    `max_entries` entries per parameter are sampled.  Returns the maximum
    over entries of  |g_bp - g_fd| / max(1e-8, |g_bp| + |g_fd|).

    Each entry is probed at a ladder of step sizes spanning
    [eps/100, 30*eps] and the best-agreeing estimate is kept: large
    steps suffer truncation error on strongly curved directions (batch
    statistics make small-batch graphs very curved), small steps hit the
    float64 noise floor on structurally-zero gradients (e.g. a conv bias
    feeding a batchnorm), and a genuinely wrong analytic gradient
    disagrees at every step size.  Frozen parameters
    (requires_grad=False) are skipped.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    steps = (30.0 * eps, 3.0 * eps, eps, eps / 10.0, eps / 100.0)
    worst = 0.0
    for p in params:
        if not p.requires_grad or p.grad is None:
            continue
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        n = flat.shape[0]
        picks = np.arange(n) if n <= max_entries else rng.choice(n, max_entries, replace=False)
        for idx in picks:
            original = flat[idx]
            bp = float(gflat[idx])
            best = np.inf
            for h in steps:
                flat[idx] = original + h
                hi = loss_fn()
                flat[idx] = original - h
                lo = loss_fn()
                flat[idx] = original
                fd = (hi - lo) / (2.0 * h)
                best = min(best, abs(bp - fd) / max(1e-8, abs(bp) + abs(fd)))
            worst = max(worst, best)
    return worst
