"""End-to-end completion model: encoder, image provider, fusion, decoder, merge."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .config import Config
from .decoder import SeedDecoder, merge
from .encoder import HGAEncoder, HierarchicalFeatures
from .errors import DimensionError
from .fusion import MSCF, FusedFeatures, fused_token_count
from .image import PatchEncoder
from .nn import Module


@dataclass
class Completion:
    generated: Tensor          # M_gen x 3
    merged: Tensor             # N_c x 3, generated rows first
    observed_index: np.ndarray  # partial rows copied into ``merged``
    features: HierarchicalFeatures
    fused: FusedFeatures
    image_tokens: Tensor | None


class CompletionModel(Module):
    def __init__(self, cfg: Config, seed: int | None = None):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.train.seed if seed is None else seed)
        ab = cfg.ablation
        e = cfg.encoder
        self.encoder = HGAEncoder(e, rng, project_local=ab != "no_local")
        self.image_encoder = None
        if cfg.image.provider == "patch" and self.uses_image:
            self.image_encoder = PatchEncoder(cfg.image.patch, cfg.image.d_image, rng, cfg.image.trainable)
        self.fusion = MSCF(e.latent, e.latent, cfg.image.d_image, e.latent, cfg.fusion.heads, rng,
                           ablation=ab, residual=cfg.fusion.residual)
        self.decoder = SeedDecoder(e.latent, cfg.decoder, rng, e.slope)

    @property
    def uses_image(self) -> bool:
        return self.cfg.ablation not in ("no_image",)

    @property
    def uses_contrastive(self) -> bool:
        return self.uses_image and self.cfg.ablation != "no_closs" and self.cfg.train.lambda_con > 0

    def expected_tokens(self, n_image: int) -> int:
        e = self.cfg.encoder
        return fused_token_count(self.cfg.ablation, e.n_global, e.n_local, n_image)

    def image_tokens(self, image) -> Tensor | None:
        if not self.uses_image:
            return None
        if image is None:
            raise DimensionError("this model needs image input (features or pixels)")
        arr = np.asarray(image)
        if self.image_encoder is not None:
            return self.image_encoder(arr)
        if arr.ndim != 2 or arr.shape[1] != self.cfg.image.d_image:
            raise DimensionError(
                f"image features must be N_I x {self.cfg.image.d_image}, got {arr.shape}"
            )
        return Tensor(arr)

    def __call__(self, partial, image=None) -> Completion:
        pts = np.asarray(getattr(partial, "points", partial))
        feats = self.encoder(pts)
        tokens = self.image_tokens(image)
        local = feats.local if self.cfg.ablation != "no_local" else None
        fused = self.fusion(feats.glob, local, tokens)
        generated = self.decoder(fused.tokens)
        merged, sel = merge(generated, pts, self.cfg.decoder.n_out)
        return Completion(generated, merged, sel, feats, fused, tokens)
