"""Seeded synthetic completion tasks: primitive shapes with a half-space
occlusion, plus a coarse orthographic depth render encoded into image tokens."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .config import SyntheticSpec
from .errors import ConfigError
from .image import PatchEncoder

# weights of the frozen patch encoder that turns renders into image tokens
IMAGE_ENCODER_SEED = 20240917
MIN_KEEP = 0.25


@dataclass
class Sample:
    partial: np.ndarray          # N_p x 3
    complete: np.ndarray         # N_c x 3
    features: np.ndarray | None  # N_I x D_I image tokens
    pixels: np.ndarray | None    # H x W x 3 render in [0, 1]
    category: str
    id: str
    cut_normal: np.ndarray | None = None

    def image(self, provider: str):
        return self.pixels if provider == "patch" else self.features


# ---------------------------------------------------------------------------
# surfaces
# ---------------------------------------------------------------------------

def _unit(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sphere(rng, n, radius=1.0, center=(0.0, 0.0, 0.0)):
    return _unit(rng, n) * radius + np.asarray(center)


def _box(rng, n, half, center=(0.0, 0.0, 0.0)):
    hx, hy, hz = half
    areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-1.0, 1.0, size=(n, 3)) * np.asarray(half)
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    u[np.arange(n), axis] = sign * np.asarray(half)[axis]
    return u + np.asarray(center)


def _cylinder(rng, n, radius, half_h):
    side = 2 * np.pi * radius * 2 * half_h
    cap = np.pi * radius ** 2
    part = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    theta = rng.uniform(0, 2 * np.pi, size=n)
    r = np.where(part == 0, radius, radius * np.sqrt(rng.uniform(0, 1, size=n)))
    z = np.where(part == 0, rng.uniform(-half_h, half_h, size=n), np.where(part == 1, half_h, -half_h))
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def shape_params(family: str, rng: np.random.Generator) -> dict:
    if family == "sphere":
        return {}
    if family == "box":
        return {"half": rng.uniform(0.4, 1.0, size=3)}
    if family == "cylinder":
        return {"radius": rng.uniform(0.4, 1.0), "half_h": rng.uniform(0.4, 1.0)}
    if family == "composite":
        d = _unit(rng, 1)[0]
        return {
            "r": rng.uniform(0.45, 0.7),
            "half": rng.uniform(0.25, 0.5, size=3),
            "offset": d * rng.uniform(0.55, 0.85),
        }
    raise ConfigError(f"unknown synthetic family {family!r}")


def sample_surface(family: str, params: dict, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points distributed uniformly by area over the shape's surface."""
    if family == "sphere":
        return _sphere(rng, n)
    if family == "box":
        return _box(rng, n, params["half"])
    if family == "cylinder":
        return _cylinder(rng, n, params["radius"], params["half_h"])
    # sphere at the origin united with an offset box; surface points inside
    # the other solid are rejected
    r, half, off = params["r"], params["half"], params["offset"]
    a_s = 4 * np.pi * r * r
    a_b = 8 * (half[0] * half[1] + half[1] * half[2] + half[0] * half[2])
    out = []
    got = 0
    while got < n:
        k = max(2 * (n - got), 64)
        which = rng.uniform(size=k) < a_s / (a_s + a_b)
        pts = np.where(which[:, None], _sphere(rng, k, r), _box(rng, k, half, off))
        inside_sphere = np.linalg.norm(pts, axis=1) < r - 1e-9
        inside_box = np.all(np.abs(pts - off) < half - 1e-9, axis=1)
        keep = np.where(which, ~inside_box, ~inside_sphere)
        pts = pts[keep]
        out.append(pts)
        got += len(pts)
    return np.concatenate(out)[:n]


# ---------------------------------------------------------------------------
# rendering and image tokens
# ---------------------------------------------------------------------------

def depth_render(points: np.ndarray, size: int = 32) -> np.ndarray:
    """Orthographic view down the -z axis over x, y in [-1, 1].

    Each pixel holds ``(z + 1) / 2`` of its nearest-to-camera (largest z)
    point, background 0; replicated to three channels.
    """
    pts = np.clip(points, -1.0, 1.0)
    ij = np.clip(((pts[:, :2] + 1.0) * 0.5 * size).astype(np.int64), 0, size - 1)
    depth = np.zeros((size, size))
    val = (pts[:, 2] + 1.0) * 0.5
    np.maximum.at(depth, (size - 1 - ij[:, 1], ij[:, 0]), val)
    return np.repeat(depth[:, :, None], 3, axis=2)


@lru_cache(maxsize=8)
def frozen_image_encoder(patch: int, d_image: int) -> PatchEncoder:
    return PatchEncoder(patch, d_image, np.random.default_rng(IMAGE_ENCODER_SEED), trainable=False)


def encode_render(pixels: np.ndarray, patch: int, d_image: int) -> np.ndarray:
    return frozen_image_encoder(patch, d_image)(pixels).data.astype(np.float32)


# ---------------------------------------------------------------------------
# samples
# ---------------------------------------------------------------------------

def make_synthetic(spec: SyntheticSpec, seed: int, sample_id: str | None = None) -> Sample:
    """Fully seeded (partial, image, complete) triple in unit-sphere coordinates."""
    if not 0 < spec.occlusion < 1:
        raise ConfigError("occlusion fraction must be in (0, 1)")
    if 1 - spec.occlusion < MIN_KEEP:
        raise ConfigError(f"occlusion {spec.occlusion} keeps fewer than {MIN_KEEP:.0%} of the points")
    rng = np.random.default_rng(seed)
    params = shape_params(spec.family, rng)
    n_dense = max(4 * spec.n_complete, int(np.ceil(2 * spec.n_partial / (1 - spec.occlusion))))
    dense = sample_surface(spec.family, params, n_dense, rng)
    complete = sample_surface(spec.family, params, spec.n_complete, rng)

    # centroid from the dense sample, radius over both so every point fits the unit ball
    centroid = dense.mean(axis=0)
    scale = 1.0 / np.linalg.norm(np.concatenate([dense, complete]) - centroid, axis=1).max()
    dense = (dense - centroid) * scale
    complete = (complete - centroid) * scale

    normal = _unit(rng, 1)[0]
    proj = dense @ normal
    cut = np.quantile(proj, 1.0 - spec.occlusion)
    kept = dense[proj < cut]
    if len(kept) == 0:
        raise ConfigError("degenerate occlusion: partial cloud is empty")
    idx = rng.choice(len(kept), size=spec.n_partial, replace=len(kept) < spec.n_partial)
    partial = kept[idx]
    if spec.noise > 0:
        partial = partial + rng.normal(scale=spec.noise, size=partial.shape)

    pixels = depth_render(dense, spec.render_size)
    feats = encode_render(pixels, spec.patch, spec.d_image)
    return Sample(
        partial=partial.astype(np.float32), complete=complete.astype(np.float32),
        features=feats, pixels=pixels.astype(np.float32), category=spec.family,
        id=sample_id or f"{spec.family}_{seed}", cut_normal=normal,
    )


def make_dataset(spec: SyntheticSpec, n: int, seed: int, split: str = "train") -> list[Sample]:
    base = {"train": 0, "test": 1}[split]
    seeds = np.random.SeedSequence([seed, base]).generate_state(n, dtype=np.uint32)
    return [make_synthetic(spec, int(s), f"{spec.family}_{split}_{i:04d}") for i, s in enumerate(seeds)]
