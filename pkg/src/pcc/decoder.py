"""Point decoder and the observed-geometry merge."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import DecoderConfig
from .errors import ConfigError, ContractError
from .geometry import farthest_point_sample
from .nn import MLP, Module, parameter


class SeedDecoder(Module):
    """Max-pool the fused tokens to a shape code, pair it with each of
    ``m_gen`` learned seeds and regress one 3-D point per seed."""

    def __init__(self, dim: int, cfg: DecoderConfig, rng: np.random.Generator, slope: float = 0.2):
        self.seeds = parameter(rng.uniform(-1.0, 1.0, size=(cfg.m_gen, cfg.seed_dim)))
        self.mlp = MLP([dim + cfg.seed_dim, *cfg.hidden, 3], rng, slope)
        self.m_gen = cfg.m_gen

    def shape_code(self, tokens: Tensor) -> Tensor:
        if tokens.shape[0] < 1:
            raise ContractError("decoder received no fused tokens")
        return ad.max_(tokens, axis=0).reshape(1, tokens.shape[1])

    def __call__(self, tokens: Tensor) -> Tensor:
        code = self.shape_code(tokens)
        tiled = ad.gather_rows(code, np.zeros(self.m_gen, dtype=np.int64))
        return self.mlp(ad.concat([tiled, self.seeds], axis=1))


def merge(generated, partial, n_out: int) -> tuple[Tensor, np.ndarray]:
    """Append ``n_out - len(generated)`` FPS-selected partial points.

    Returns the merged N_c x 3 tensor and the selected partial indices.  The
    observed rows are constants copied bit-for-bit from ``partial``.
    """
    gen = ad.as_tensor(generated)
    pts = np.asarray(getattr(partial, "points", partial))
    m = gen.shape[0]
    if m > n_out:
        raise ConfigError(f"generated {m} points exceeds output size {n_out}")
    need = n_out - m
    if need == 0:
        return gen, np.empty(0, dtype=np.int64)
    if need > len(pts):
        raise ConfigError(f"merge needs {need} observed points but the partial cloud has {len(pts)}")
    sel = farthest_point_sample(pts, need, 0)
    observed = Tensor(pts[sel])
    return ad.concat([gen, observed], axis=0), sel
