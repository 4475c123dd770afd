"""Multi-scale cross-modal attention fusion.

Global (F_g), local (F_l) and image (F_I) tokens are linearly projected to a
shared width D, then five attention interactions are run:

    gg: self(F'_g)        gl: F'_g -> F'_l      ll: self(F'_l)
    Ig: F'_g -> F'_I      Il: F'_l -> F'_I

and concatenated along the token axis in the order ``gg, gl, ll, Ig, Il``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError
from .nn import Linear, Module

ORDER = ("gg", "gl", "ll", "Ig", "Il")

# (query source, key/value source) for each interaction
ROUTES = {
    "gg": ("g", "g"),
    "gl": ("g", "l"),
    "ll": ("l", "l"),
    "Ig": ("g", "I"),
    "Il": ("l", "I"),
}


class Attention(Module):
    """Multi-head scaled dot-product attention with an output mix."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ConfigError(f"attention width {dim} not divisible by {heads} heads")
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)
        self.heads = heads
        self.dim = dim

    def __call__(self, queries: Tensor, keys: Tensor, return_weights: bool = False):
        if queries.shape[-1] != self.dim or keys.shape[-1] != self.dim:
            raise DimensionError(f"attention expects width {self.dim}, got {queries.shape} and {keys.shape}")
        h, dh = self.heads, self.dim // self.heads
        m, n = queries.shape[0], keys.shape[0]
        q = self.q(queries).reshape(m, h, dh).transpose(1, 0, 2)   # h x M x dh
        k = self.k(keys).reshape(n, h, dh).transpose(1, 2, 0)      # h x dh x N
        v = self.v(keys).reshape(n, h, dh).transpose(1, 0, 2)      # h x N x dh
        a = ad.softmax_rows(ad.matmul(q, k) * (1.0 / np.sqrt(dh)))
        ctx = ad.matmul(a, v).transpose(1, 0, 2).reshape(m, self.dim)
        y = self.out(ctx)
        if return_weights:
            return y, a
        return y


@dataclass
class FusedFeatures:
    blocks: dict[str, Tensor]
    order: tuple[str, ...]
    tokens: Tensor                     # concatenation of blocks in ``order``
    projected: dict[str, Tensor]       # F'_g, F'_l, F'_I (those present)
    maps: dict[str, np.ndarray] = field(default_factory=dict)  # head-averaged weights

    @property
    def token_count(self) -> int:
        return self.tokens.shape[0]


def block_layout(ablation: str) -> tuple[str, ...]:
    """Token blocks produced for an ablation setting."""
    if ablation == "no_local":
        return ("gg", "Ig")
    if ablation == "no_image":
        return ("gg", "gl", "ll")
    if ablation == "no_mscf":
        return ("g", "l", "I")
    return ORDER


def fused_token_count(ablation: str, n_global: int, n_local: int, n_image: int) -> int:
    sizes = {"g": n_global, "l": n_local, "I": n_image}
    # an attention block has as many rows as its query source
    return sum(sizes[ROUTES[b][0]] if b in ROUTES else sizes[b] for b in block_layout(ablation))


class MSCF(Module):
    def __init__(self, d_global: int, d_local: int, d_image: int, dim: int, heads: int,
                 rng: np.random.Generator, ablation: str = "none", residual: bool = False):
        self.ablation = ablation
        self.residual = residual
        layout = block_layout(ablation)
        sources = set()
        for b in layout:
            sources.update(ROUTES.get(b, (b,)))
        self.psi_g = Linear(d_global, dim, rng)
        self.psi_l = Linear(d_local, dim, rng) if "l" in sources else None
        self.psi_I = Linear(d_image, dim, rng) if "I" in sources else None
        self.att = {b: Attention(dim, heads, rng) for b in layout if b in ROUTES}
        self._layout = layout

    @property
    def layout(self) -> tuple[str, ...]:
        return self._layout

    def project(self, f_g: Tensor, f_l: Tensor | None, f_i: Tensor | None) -> dict[str, Tensor]:
        out = {"g": self.psi_g(f_g)}
        if self.psi_l is not None:
            if f_l is None:
                raise DimensionError("local features required by this fusion layout")
            out["l"] = self.psi_l(f_l)
        if self.psi_I is not None:
            if f_i is None:
                raise DimensionError("image features required by this fusion layout")
            out["I"] = self.psi_I(ad.as_tensor(f_i))
        return out

    def __call__(self, f_g: Tensor, f_l: Tensor | None, f_i: Tensor | None) -> FusedFeatures:
        proj = self.project(f_g, f_l, f_i)
        blocks: dict[str, Tensor] = {}
        maps: dict[str, np.ndarray] = {}
        for b in self._layout:
            if b not in ROUTES:
                blocks[b] = proj[b]
                continue
            qs, ks = ROUTES[b]
            y, a = self.att[b](proj[qs], proj[ks], return_weights=True)
            if self.residual:
                y = y + proj[qs]
            blocks[b] = y
            maps[b] = a.data.mean(axis=0)
        tokens = ad.concat([blocks[b] for b in self._layout], axis=0)
        return FusedFeatures(blocks=blocks, order=self._layout, tokens=tokens, projected=proj, maps=maps)
