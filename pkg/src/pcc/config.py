"""Configuration dataclasses and the flat ``key = value`` config format.

Every field is addressable by a dotted path, e.g. ``encoder.k1 = 16`` or
``train.lr_drop_epochs = 50,80,120,200``.  Unknown keys are errors.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field

from .errors import ConfigError

ABLATIONS = ("none", "no_local", "no_mscf", "no_closs", "no_image")


@dataclass
class EncoderConfig:
    d0: int = 64                 # point-wise embedding width
    k1: int = 16                 # neighbours per graph descriptor
    width_local: int = 128       # channels after the first GD stage
    width_global: int = 256      # channels after the second GD stage
    n_local: int = 512
    n_global: int = 128
    latent: int = 192            # shared width D after projection
    bands: int = 4
    groups: int = 4
    slope: float = 0.2
    gn_eps: float = 1e-5


@dataclass
class ImageConfig:
    provider: str = "precomputed"   # precomputed | patch
    image_size: int = 224
    patch: int = 32
    d_image: int = 192
    trainable: bool = True


@dataclass
class FusionConfig:
    heads: int = 4
    residual: bool = False


@dataclass
class DecoderConfig:
    n_out: int = 2048
    m_gen: int = 1024
    seed_dim: int = 16
    hidden: tuple[int, ...] = (256, 128)


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 400
    max_steps: int = 0            # 0 = no cap
    lr0: float = 0.1
    lr_drop_epochs: tuple[int, ...] = (50, 80, 120, 200)
    lr_factor: float = 0.1
    seed: int = 0
    lambda_cd: float = 0.8
    lambda_con: float = 0.2
    tau: float = 0.07
    clip_norm: float = 5.0        # <= 0 disables clipping
    closs_batch_mean: bool = True
    pool: str = "max"             # max | mean, for the contrastive global vectors
    per_category: bool = True
    fscore_d: float = 0.001


@dataclass
class SyntheticSpec:
    family: str = "sphere"        # sphere | box | cylinder | composite
    n_complete: int = 512
    n_partial: int = 256
    occlusion: float = 0.5
    noise: float = 0.0
    n_train: int = 64
    n_test: int = 16
    render_size: int = 32
    patch: int = 8
    d_image: int = 64


@dataclass
class Config:
    ablation: str = "none"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    image: ImageConfig = field(default_factory=ImageConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)

    def validate(self) -> "Config":
        e, d, t = self.encoder, self.decoder, self.train
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if e.k1 < 1:
            raise ConfigError("encoder.k1 must be >= 1")
        for w in ("d0", "width_local", "width_global"):
            if getattr(e, w) % e.groups:
                raise ConfigError(f"encoder.{w}={getattr(e, w)} not divisible by encoder.groups={e.groups}")
        if not 1 <= e.n_global < e.n_local:
            raise ConfigError("need 1 <= encoder.n_global < encoder.n_local")
        if e.latent % self.fusion.heads:
            raise ConfigError(f"encoder.latent={e.latent} not divisible by fusion.heads={self.fusion.heads}")
        if not 1 <= d.m_gen <= d.n_out:
            raise ConfigError("need 1 <= decoder.m_gen <= decoder.n_out")
        if t.lr0 <= 0:
            raise ConfigError("train.lr0 must be > 0")
        drops = list(t.lr_drop_epochs)
        if any(b <= a for a, b in zip(drops, drops[1:])):
            raise ConfigError("train.lr_drop_epochs must be strictly increasing")
        if t.lambda_cd < 0 or t.lambda_con < 0:
            raise ConfigError("loss weights must be >= 0")
        if t.tau <= 0:
            raise ConfigError("train.tau must be > 0")
        if t.pool not in ("max", "mean"):
            raise ConfigError("train.pool must be max or mean")
        if self.image.provider not in ("precomputed", "patch"):
            raise ConfigError("image.provider must be precomputed or patch")
        if self.image.image_size % self.image.patch:
            raise ConfigError("image.image_size must be divisible by image.patch")
        s = self.synthetic
        if s.family not in ("sphere", "box", "cylinder", "composite"):
            raise ConfigError(f"unknown synthetic family {s.family!r}")
        if not 0 < s.occlusion < 1:
            raise ConfigError("synthetic.occlusion must be in (0, 1)")
        return self


def desk_config(family: str = "sphere") -> Config:
    """Reduced sizes for synthetic runs: N_p=256, N_c=512, D=64, batch 8, lr 1e-3."""
    cfg = Config(
        encoder=EncoderConfig(d0=32, k1=16, width_local=64, width_global=64,
                              n_local=128, n_global=32, latent=64),
        image=ImageConfig(provider="precomputed", image_size=32, patch=8, d_image=64),
        decoder=DecoderConfig(n_out=512, m_gen=256, seed_dim=8, hidden=(128, 64)),
        train=TrainConfig(batch_size=8, epochs=25, lr0=1e-3),
        synthetic=SyntheticSpec(family=family),
    )
    return cfg.validate()


def tiny_config() -> Config:
    """Minimal widths used by gradient checks."""
    cfg = Config(
        encoder=EncoderConfig(d0=16, k1=4, width_local=16, width_global=16,
                              n_local=16, n_global=4, latent=8),
        image=ImageConfig(provider="patch", image_size=16, patch=8, d_image=8),
        fusion=FusionConfig(heads=2),
        decoder=DecoderConfig(n_out=48, m_gen=32, seed_dim=4, hidden=(8,)),
        train=TrainConfig(batch_size=2, lr0=1e-3),
        synthetic=SyntheticSpec(n_complete=64, n_partial=64, render_size=16, patch=8, d_image=8),
    )
    return cfg.validate()


# ---------------------------------------------------------------------------
# flat key = value parsing
# ---------------------------------------------------------------------------

def _coerce(raw: str, typ, key: str):
    origin = typing.get_origin(typ)
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw.strip()
        if origin is tuple:
            (inner, _) = typing.get_args(typ)
            items = [x for x in raw.replace(" ", "").split(",") if x]
            return tuple(inner(x) for x in items)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from None
    raise ConfigError(f"{key}: unsupported field type {typ}")


def _field_types(obj) -> dict:
    return typing.get_type_hints(type(obj))


def set_key(cfg: Config, key: str, raw: str) -> None:
    """Assign one dotted key; raises ConfigError naming the key if unknown."""
    parts = key.strip().split(".")
    obj = cfg
    for part in parts[:-1]:
        if not dataclasses.is_dataclass(obj) or part not in {f.name for f in dataclasses.fields(obj)}:
            raise ConfigError(f"unknown config key {key!r}")
        obj = getattr(obj, part)
    leaf = parts[-1]
    if not dataclasses.is_dataclass(obj) or leaf not in {f.name for f in dataclasses.fields(obj)}:
        raise ConfigError(f"unknown config key {key!r}")
    typ = _field_types(obj)[leaf]
    if dataclasses.is_dataclass(typ):
        raise ConfigError(f"config key {key!r} names a section, not a value")
    setattr(obj, leaf, _coerce(raw, typ, key))


def parse_lines(text: str) -> list[tuple[int, str, str]]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {line!r}")
        k, v = line.split("=", 1)
        out.append((lineno, k.strip(), v.strip()))
    return out


def apply_text(cfg: Config, text: str) -> Config:
    for _, k, v in parse_lines(text):
        set_key(cfg, k, v)
    return cfg


def load_file(cfg: Config, path) -> Config:
    with open(path, encoding="utf-8") as fh:
        return apply_text(cfg, fh.read())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def dump(cfg: Config) -> str:
    """Serialise every key so that ``apply_text(Config(), dump(cfg))`` restores ``cfg``."""
    lines = [f"ablation = {cfg.ablation}"]
    for f in dataclasses.fields(cfg):
        sec = getattr(cfg, f.name)
        if not dataclasses.is_dataclass(sec):
            continue
        for g in dataclasses.fields(sec):
            lines.append(f"{f.name}.{g.name} = {_fmt(getattr(sec, g.name))}")
    return "\n".join(lines) + "\n"
