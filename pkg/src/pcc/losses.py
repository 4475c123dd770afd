"""Training objectives."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DimensionError
from .geometry import chamfer_loss


def pool_global(features: Tensor, mode: str = "max") -> Tensor:
    """Collapse N x D tokens to a 1 x D vector (channel-wise max or mean)."""
    if features.shape[0] < 1:
        raise ContractError("pool_global on zero tokens")
    if mode == "max":
        return ad.max_(features, axis=0).reshape(1, features.shape[1])
    if mode == "mean":
        return features.mean(axis=0, keepdims=True)
    raise ConfigError(f"unknown pooling mode {mode!r}")


def contrastive_loss(g: Tensor, v: Tensor, tau: float = 0.07) -> Tensor:
    """Symmetric InfoNCE over a batch of paired global vectors.

    ``-1/2 * [sum_i log softmax_j(sim(g_i, v_j)/tau)_i + sum_i log softmax_j(sim(v_i, g_j)/tau)_i]``
    with cosine similarity, summed (not averaged) over the batch.
    """
    g, v = ad.as_tensor(g), ad.as_tensor(v)
    if g.ndim != 2 or g.shape != v.shape:
        raise DimensionError(f"contrastive_loss needs two B x D arrays of equal shape, got {g.shape} and {v.shape}")
    if tau <= 0:
        raise ConfigError("temperature must be > 0")
    b = g.shape[0]
    sim = ad.matmul(ad.l2_normalize_rows(g), ad.l2_normalize_rows(v).T) * (1.0 / tau)  # B x B
    diag = (np.arange(b), np.arange(b))
    g_to_v = ad.log_softmax_rows(sim)[diag].sum()
    v_to_g = ad.log_softmax_rows(sim.T)[diag].sum()
    return (g_to_v + v_to_g) * -0.5


def total_loss(pred: Tensor, gt, g: Tensor | None = None, v: Tensor | None = None,
               lambda_cd: float = 0.8, lambda_con: float = 0.2, tau: float = 0.07) -> Tensor:
    """``lambda_cd * chamfer + lambda_con * contrastive`` for one prediction.

    The contrastive term is skipped when its weight is zero or no pair is given.
    """
    if lambda_cd < 0 or lambda_con < 0:
        raise ConfigError("loss weights must be >= 0")
    loss = chamfer_loss(pred, gt) * lambda_cd
    if lambda_con > 0 and g is not None and v is not None:
        loss = loss + contrastive_loss(g, v, tau) * lambda_con
    return loss
