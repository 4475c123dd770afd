"""Adam, the step learning-rate schedule and global-norm clipping."""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


def lr_schedule(epoch: int, lr0: float = 0.1, drop_epochs=(50, 80, 120, 200), factor: float = 0.1) -> float:
    """``lr0 * factor ** (number of drop epochs <= epoch)``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return lr0 * factor ** bisect.bisect_right(sorted(drop_epochs), epoch)


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list[Tensor], grads: list[np.ndarray | None], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Bias-corrected Adam update, in place on ``params``.

    Moments are kept in float64; a ``None`` gradient counts as zero.
    """
    if not state.m:
        state.m = [np.zeros(p.shape) for p in params]
        state.v = [np.zeros(p.shape) for p in params]
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.zeros(p.shape) if g is None else np.asarray(g, dtype=np.float64)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        upd = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data.astype(np.float64) - upd).astype(p.data.dtype)
    return state


def clip_global_norm(grads: list[np.ndarray | None], max_norm: float) -> tuple[list, float]:
    """Scale all gradients together so their joint L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads if g is not None)))
    if max_norm > 0 and total > max_norm:
        s = max_norm / (total + 1e-12)
        grads = [None if g is None else g * s for g in grads]
    return grads, total
