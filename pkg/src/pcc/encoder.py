"""Hierarchical graph-attention point cloud encoder.

Pipeline for an N-point input::

    embed -> GD -> GAD(n_local) -> +pos -> GD -> GAD(n_global) -> +pos
                                      |                             |
                                 proj_l -> F_l                 proj_g -> F_g
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import EncoderConfig
from .errors import ConfigError, DimensionError
from .geometry import knn_graph, positional_encoding
from .nn import MLP, GroupNorm, Linear, Module


@dataclass
class HierarchicalFeatures:
    local: Tensor            # F_l, n_local x D
    local_coords: np.ndarray
    local_index: np.ndarray  # rows of the input cloud
    glob: Tensor             # F_g, n_global x D
    global_coords: np.ndarray
    global_index: np.ndarray  # rows of the input cloud


class PointwiseEmbed(Module):
    """Shared two-layer per-point MLP, 3 -> d0 -> d0."""

    def __init__(self, d0: int, rng, slope: float = 0.2):
        self.mlp = MLP([3, d0, d0], rng, slope)

    def __call__(self, coords) -> Tensor:
        return self.mlp(ad.as_tensor(coords))


class GraphDescriptor(Module):
    """Edge features ``phi(p_i - p_j, f_i, f_j)`` max-pooled over K neighbours.

    ``phi`` is one shared per-edge linear map (a 1x1 convolution over the
    N x K edge grid) followed by GroupNorm and LeakyReLU.
    """

    def __init__(self, in_dim: int, out_dim: int, k: int, rng, groups: int = 4, slope: float = 0.2,
                 eps: float = 1e-5):
        if k < 1:
            raise ConfigError("graph descriptor needs K1 >= 1")
        if out_dim % groups:
            raise ConfigError(f"out_dim {out_dim} not divisible by groups {groups}")
        self.edge = Linear(2 * in_dim + 3, out_dim, rng)
        self.norm = GroupNorm(out_dim, groups, eps)
        self.k = k
        self.slope = slope

    def edge_features(self, coords: np.ndarray, feats: Tensor) -> Tensor:
        """The raw (pre-phi) N x K x (3 + 2C) concatenation [p_i - p_j, f_i, f_j]."""
        if feats.shape[0] != coords.shape[0]:
            raise DimensionError(f"features have {feats.shape[0]} rows, coordinates {coords.shape[0]}")
        graph = knn_graph(coords, self.k)
        n, c = feats.shape
        offsets = Tensor(graph.offsets)
        f_i = ad.gather_rows(feats, np.repeat(np.arange(n)[:, None], self.k, axis=1))
        f_j = ad.gather_rows(feats, graph.indices)
        return ad.concat([offsets, f_i, f_j], axis=2)

    def __call__(self, coords: np.ndarray, feats: Tensor) -> Tensor:
        e = self.edge(self.edge_features(coords, feats))
        e = ad.leaky_relu(self.norm(e), self.slope)
        return ad.max_over_neighbors(e)


def select_top(scores: np.ndarray, m: int) -> np.ndarray:
    """Indices of the ``m`` highest scores (ties -> lower index), ascending."""
    order = np.lexsort((np.arange(len(scores)), -scores))
    return np.sort(order[:m])


class AttentionDownsample(Module):
    """Score each point with a small MLP, keep the top ``m``, gate features by
    ``sigmoid(score)`` so the scorer receives gradient."""

    def __init__(self, dim: int, rng, slope: float = 0.2):
        self.score = MLP([dim, max(dim // 2, 1), 1], rng, slope)

    def scores(self, feats: Tensor) -> Tensor:
        return self.score(feats)

    def __call__(self, coords: np.ndarray, feats: Tensor, m: int):
        n = feats.shape[0]
        if m >= n:
            raise ConfigError(f"attention downsample needs M < N, got M={m}, N={n}")
        w = self.scores(feats)  # N x 1
        sel = select_top(w.data[:, 0].astype(np.float64), m)
        ad.record_branch(sel)
        gated = ad.gather_rows(feats, sel) * ad.sigmoid(ad.gather_rows(w, sel))
        return coords[sel], gated, sel


class PositionalMLP(Module):
    """``MLP(feats ++ gamma(coords))`` back to ``width`` channels."""

    def __init__(self, width: int, bands: int, rng, slope: float = 0.2):
        self.mlp = MLP([width + 6 * bands, width, width], rng, slope)
        self.bands = bands

    def __call__(self, feats: Tensor, coords: np.ndarray) -> Tensor:
        if feats.shape[0] != coords.shape[0]:
            raise DimensionError(f"features have {feats.shape[0]} rows, coordinates {coords.shape[0]}")
        pe = Tensor(positional_encoding(coords, self.bands))
        return self.mlp(ad.concat([feats, pe], axis=1))


class HGAEncoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, project_local: bool = True):
        self.cfg = cfg
        self.embed = PointwiseEmbed(cfg.d0, rng, cfg.slope)
        self.gd1 = GraphDescriptor(cfg.d0, cfg.width_local, cfg.k1, rng, cfg.groups, cfg.slope, cfg.gn_eps)
        self.gad1 = AttentionDownsample(cfg.width_local, rng, cfg.slope)
        self.pos1 = PositionalMLP(cfg.width_local, cfg.bands, rng, cfg.slope)
        self.gd2 = GraphDescriptor(cfg.width_local, cfg.width_global, cfg.k1, rng, cfg.groups, cfg.slope,
                                   cfg.gn_eps)
        self.gad2 = AttentionDownsample(cfg.width_global, rng, cfg.slope)
        self.pos2 = PositionalMLP(cfg.width_global, cfg.bands, rng, cfg.slope)
        # without the local branch there is nothing to project at the 512 level
        self.proj_l = Linear(cfg.width_local, cfg.latent, rng) if project_local else None
        self.proj_g = Linear(cfg.width_global, cfg.latent, rng)

    def __call__(self, coords) -> HierarchicalFeatures:
        cfg = self.cfg
        coords = np.asarray(getattr(coords, "points", coords), dtype=np.float64)
        n = coords.shape[0]
        if n < 2 * cfg.n_global or n <= cfg.n_local:
            raise ConfigError(
                f"input cloud has {n} points; need > n_local={cfg.n_local} and >= 2*n_global={2 * cfg.n_global}"
            )
        f = self.embed(coords)
        f = self.gd1(coords, f)
        c1, f1, sel1 = self.gad1(coords, f, cfg.n_local)
        f1 = self.pos1(f1, c1)
        f2 = self.gd2(c1, f1)
        c2, f2, sel2 = self.gad2(c1, f2, cfg.n_global)
        f2 = self.pos2(f2, c2)
        local = self.proj_l(f1) if self.proj_l is not None else f1
        return HierarchicalFeatures(
            local=local, local_coords=c1, local_index=sel1,
            glob=self.proj_g(f2), global_coords=c2, global_index=sel1[sel2],
        )
