"""Image features for the fusion stage.

Two interchangeable backends produce an ``N_I x D_I`` token array:

* :class:`PatchEncoder`, a trainable patch-grid stub (linear map of each
  flattened patch plus a fixed 2-D sinusoidal position term);
* :func:`load_features`, which reads precomputed tokens from a PCF1 file,
  e.g. the output of a real pretrained backbone.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DimensionError
from .io import read_pcf
from .nn import Linear, Module


def position_grid(rows: int, cols: int, dim: int) -> np.ndarray:
    """2-D sinusoidal position terms, one row per patch in raster order.

    Half the channels encode the patch row, half the column, each with
    the usual ``sin/cos(pos / 10000^(2i/d))`` ladder.
    """
    half = dim // 2
    def axis_terms(pos, width):
        i = np.arange((width + 1) // 2)
        freq = 1.0 / (10000.0 ** (2 * i / max(width, 1)))
        ang = pos[:, None] * freq[None, :]
        out = np.empty((len(pos), width))
        out[:, 0::2] = np.sin(ang)[:, : (width + 1) // 2]
        out[:, 1::2] = np.cos(ang)[:, : width // 2]
        return out
    r, c = np.meshgrid(np.arange(rows, dtype=np.float64), np.arange(cols, dtype=np.float64), indexing="ij")
    return np.concatenate([axis_terms(r.reshape(-1), half), axis_terms(c.reshape(-1), dim - half)], axis=1)


def patchify(pixels: np.ndarray, patch: int) -> np.ndarray:
    """H x W x 3 image -> (H/p * W/p) x (p*p*3) flattened patches, raster order."""
    img = np.asarray(pixels)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError(f"image must be H x W x 3, got {img.shape}")
    h, w, _ = img.shape
    if h % patch or w % patch:
        raise ConfigError(f"image {h}x{w} not divisible by patch size {patch}")
    g = img.reshape(h // patch, patch, w // patch, patch, 3).transpose(0, 2, 1, 3, 4)
    return g.reshape((h // patch) * (w // patch), patch * patch * 3)


class PatchEncoder(Module):
    """Trainable stand-in for a pretrained image backbone."""

    def __init__(self, patch: int, d_image: int, rng: np.random.Generator, trainable: bool = True):
        self.proj = Linear(patch * patch * 3, d_image, rng)
        self.patch = patch
        self.d_image = d_image
        if not trainable:
            for p in self.proj.parameters():
                p.requires_grad = False

    def __call__(self, pixels: np.ndarray) -> Tensor:
        img = np.asarray(pixels)
        if img.size and (img.min() < 0 or img.max() > 1):
            raise ContractError("image channels must lie in [0, 1]")
        tokens = patchify(img, self.patch)
        h, w = img.shape[0] // self.patch, img.shape[1] // self.patch
        pos = Tensor(position_grid(h, w, self.d_image))
        return self.proj(Tensor(tokens)) + pos


def patch_encode(pixels: np.ndarray, patch: int, d_image: int, rng: np.random.Generator) -> Tensor:
    """One-shot encoding with a freshly initialised encoder (deterministic given ``rng``)."""
    return PatchEncoder(patch, d_image, rng)(pixels)


def load_features(path) -> np.ndarray:
    """Read precomputed image tokens (N_I x D_I) from a PCF1 file."""
    arr = read_pcf(path)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise DimensionError(f"{path}: image features must be N_I x D_I with N_I >= 1, got {arr.shape}")
    return arr
