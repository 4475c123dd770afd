"""``pcc`` command-line entry point.

Exit codes::

    0  success
    1  gradient check failed
    2  configuration error (unknown key, bad value, bad flag combination)
    3  data error (missing/unreadable dataset or file format problem)
    4  non-finite loss during training
    5  checkpoint incompatible with the configuration or inputs

Config precedence is defaults < ``--config`` file < ``--set key=value`` < named flags.
Outputs are written through a temp file and renamed, so a failing command
leaves no partial files behind.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Sequence

import numpy as np

from . import checkpoint
from . import config as cfgmod
from .config import Config, desk_config
from .errors import (CheckpointMismatch, ConfigError, DataError, DimensionError, FormatError,
                     NonFiniteLossError)
from .fusion import ORDER
from .geometry import PointCloud
from .io import denormalize, index_dataset, normalize, pcf_bytes, read_pcf, read_ply, write_pcf, write_ply
from .model import CompletionModel
from .synthetic import make_dataset
from . import train as trainmod

log = logging.getLogger("pcc")

EXIT_OK, EXIT_GRADCHECK, EXIT_CONFIG, EXIT_DATA, EXIT_NONFINITE, EXIT_CHECKPOINT = 0, 1, 2, 3, 4, 5
FAMILIES = ("sphere", "box", "cylinder", "composite")


def _atomic_text(path: str, text: str) -> None:
    checkpoint.atomic_write(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# config assembly
# ---------------------------------------------------------------------------

def _build_config(args, base: Config) -> Config:
    cfg = base
    if getattr(args, "config", None):
        if not os.path.isfile(args.config):
            raise ConfigError(f"config file {args.config!r} not found")
        cfgmod.load_file(cfg, args.config)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfgmod.set_key(cfg, k, v)
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
    if getattr(args, "epochs", None) is not None:
        cfg.train.epochs = args.epochs
    if getattr(args, "steps", None) is not None:
        cfg.train.max_steps = args.steps
    if getattr(args, "ablation", None) is not None:
        cfg.ablation = args.ablation
    if cfg.ablation == "no_closs":
        cfg.train.lambda_con = 0.0
    return cfg.validate()


def _sidecar(ckpt_path: str) -> str:
    return os.path.splitext(ckpt_path)[0] + ".cfg"


def load_model(ckpt_path: str, config_path: str | None = None) -> CompletionModel:
    """Rebuild a model from its checkpoint and config (the ``.cfg`` sidecar by default)."""
    cfg_path = config_path or _sidecar(ckpt_path)
    if not os.path.isfile(cfg_path):
        raise ConfigError(f"no config for checkpoint {ckpt_path!r} (looked for {cfg_path!r})")
    cfg = cfgmod.load_file(Config(), cfg_path).validate()
    if not os.path.isfile(ckpt_path):
        raise DataError(f"checkpoint {ckpt_path!r} not found")
    model = CompletionModel(cfg)
    model.load_state_dict(checkpoint.load(ckpt_path))
    return model


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    if bool(args.data) == bool(args.synthetic):
        raise ConfigError("give exactly one of --data or --synthetic")
    if args.synthetic:
        cfg = _build_config(args, desk_config(args.synthetic))
        spec = cfg.synthetic
        spec.family = args.synthetic
        samples = make_dataset(spec, spec.n_train, cfg.train.seed, "train")
    else:
        cfg = _build_config(args, Config())
        samples = trainmod.load_entries(index_dataset(args.data))
    if cfg.train.per_category:
        groups: dict[str, list] = {}
        for s in samples:
            groups.setdefault(s.category, []).append(s)
    else:
        groups = {"all": list(samples)}
    os.makedirs(args.out, exist_ok=True)
    for name in sorted(groups):
        model = CompletionModel(cfg)
        result = trainmod.train(cfg, groups[name], model)
        state = result.best_state if result.best_state is not None else model.state_dict()
        stem = os.path.join(args.out, name)
        # everything is serialised before anything is written
        blobs = [
            (stem + ".hgck", checkpoint.dumps(state)),
            (stem + ".cfg", cfgmod.dump(cfg).encode("utf-8")),
            (stem + "_metrics.csv", result.metrics_csv().encode("utf-8")),
        ]
        for path, data in blobs:
            checkpoint.atomic_write(path, data)
        print(f"{name}: {result.steps} steps, best mean CD {result.best_cd:.6g} -> {stem}.hgck")
    return EXIT_OK


def _load_image(model: CompletionModel, features: str | None):
    if not model.uses_image:
        return None
    if features is None:
        raise ConfigError("this checkpoint uses image input; pass --features")
    arr = read_pcf(features)
    if model.cfg.image.provider == "patch":
        return arr
    if arr.ndim != 2 or arr.shape[1] != model.cfg.image.d_image:
        raise CheckpointMismatch(
            f"features shape {arr.shape} incompatible with checkpoint: expected N_I x {model.cfg.image.d_image}"
        )
    return arr


def _load_partial(path: str, model: CompletionModel, do_normalize: bool):
    cloud = read_ply(path)
    n_min = model.cfg.encoder.n_local + 1
    if len(cloud) < n_min:
        raise DataError(f"{path}: {len(cloud)} points, model needs at least {n_min}")
    if do_normalize:
        cloud, centroid, scale = normalize(cloud)
        return cloud.points, (centroid, scale)
    return cloud.points, None


def cmd_infer(args) -> int:
    model = load_model(args.checkpoint, args.config)
    pts, transform = _load_partial(args.partial, model, args.normalize)
    image = _load_image(model, args.features)
    out = model(pts, image).merged.data.astype(np.float64)
    cloud = PointCloud(out)
    if transform is not None:
        cloud = denormalize(cloud, *transform)
    write_ply(cloud, args.out, binary=not args.ascii)
    print(f"wrote {len(cloud)} points to {args.out}")
    return EXIT_OK


def _checkpoint_for(path: str, category: str) -> str:
    if os.path.isdir(path):
        for stem in (category, "all"):
            cand = os.path.join(path, stem + ".hgck")
            if os.path.isfile(cand):
                return cand
        raise DataError(f"no checkpoint for category {category!r} in {path!r}")
    return path


def cmd_eval(args) -> int:
    if args.fscore_d <= 0:
        raise ConfigError("--fscore-d must be > 0")
    samples = trainmod.load_entries(index_dataset(args.data))
    if args.self_check:
        predict = lambda s: s.complete  # noqa: E731
    else:
        if not args.checkpoint:
            raise ConfigError("--checkpoint is required unless --self-check is given")
        models: dict[str, CompletionModel] = {}

        def predict(s):
            path = _checkpoint_for(args.checkpoint, s.category)
            if path not in models:
                models[path] = load_model(path)
            m = models[path]
            if m.uses_image and s.features is None:
                raise DataError(f"{s.category}/{s.id}: features missing but the model uses images")
            return trainmod.predict(m, s)

    rows = trainmod.evaluate(predict, samples, args.fscore_d)
    sys.stdout.write(trainmod.format_report(rows, args.fscore_d))
    if args.csv:
        _atomic_text(args.csv, trainmod.report_csv(rows))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import autodiff as ad
    from .gradcheck import format_results, run_suite

    if args.scale != "tiny":
        raise ConfigError(f"unsupported gradcheck scale {args.scale!r}")
    faults = tuple(args.inject_fault or ())
    with ad.inject_fault(*faults):
        results = run_suite(args.seed)
    sys.stdout.write(format_results(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("FAILED: " + ", ".join(failed), file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


def cmd_attmaps(args) -> int:
    model = load_model(args.checkpoint, args.config)
    pts, _ = _load_partial(args.partial, model, args.normalize)
    image = _load_image(model, args.features)
    fused = model(pts, image).fused
    blobs = [(os.path.join(args.out_dir, f"att_{name}.pcf"), pcf_bytes(fused.maps[name]))
             for name in ORDER if name in fused.maps]
    for path, data in blobs:
        checkpoint.atomic_write(path, data)
    print(f"wrote {len(blobs)} maps to {args.out_dir}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _build_config(args, desk_config(args.family))
    spec = cfg.synthetic
    spec.family = args.family
    samples = make_dataset(spec, args.count, cfg.train.seed, args.split)
    for s in samples:
        d = os.path.join(args.out, s.category, s.id)
        os.makedirs(d, exist_ok=True)
        write_ply(s.partial, os.path.join(d, "partial_0.ply"))
        write_ply(s.complete, os.path.join(d, "gt.ply"))
        write_pcf(s.features, os.path.join(d, "feat_0.pcf"))
    print(f"wrote {len(samples)} {args.family} samples under {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pcc", description="Cross-modal point cloud completion.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model per category (or pooled)")
    _add_config_flags(p)
    p.add_argument("--data", help="dataset root <category>/<sample>/{partial_V.ply, feat_V.pcf, gt.ply}")
    p.add_argument("--synthetic", choices=FAMILIES, help="train on a generated shape family")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps", type=int, help="stop after this many optimizer steps")
    p.add_argument("--ablation", choices=cfgmod.ABLATIONS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="complete one partial cloud")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", help="config for the checkpoint (default: the .cfg sidecar)")
    p.add_argument("--partial", required=True)
    p.add_argument("--features")
    p.add_argument("--out", required=True)
    p.add_argument("--normalize", action="store_true",
                   help="normalise the partial to the unit sphere and map the output back")
    p.add_argument("--ascii", action="store_true", help="write ASCII PLY")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="per-category Chamfer / F-score table")
    p.add_argument("--checkpoint", help="checkpoint file, or a directory of <category>.hgck")
    p.add_argument("--data", required=True)
    p.add_argument("--fscore-d", type=float, default=0.001)
    p.add_argument("--csv", help="also write the table as CSV")
    p.add_argument("--self-check", action="store_true", help="score ground truth against itself")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and block")
    p.add_argument("--scale", default="tiny", choices=["tiny"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", action="append", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("attmaps", help="export the five head-averaged attention maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.add_argument("--partial", required=True)
    p.add_argument("--features")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--normalize", action="store_true")
    p.set_defaults(func=cmd_attmaps)

    p = sub.add_parser("synth", help="write a synthetic dataset tree")
    _add_config_flags(p)
    p.add_argument("--family", choices=FAMILIES, required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        code, msg = EXIT_CONFIG, f"config error: {e}"
    except CheckpointMismatch as e:
        code, msg = EXIT_CHECKPOINT, f"checkpoint mismatch: {e}"
    except DimensionError as e:
        code, msg = EXIT_CHECKPOINT, f"shape mismatch: {e}"
    except NonFiniteLossError as e:
        code, msg = EXIT_NONFINITE, f"non-finite loss: {e}"
    except (DataError, FormatError, FileNotFoundError) as e:
        code, msg = EXIT_DATA, f"data error: {e}"
    print(msg, file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
