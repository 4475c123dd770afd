"""Training and evaluation loops."""
from __future__ import annotations

import io as _io
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .config import Config
from .errors import NonFiniteLossError
from .geometry import chamfer_l2, chamfer_loss, f_score
from .io import (DatasetEntry, apply_normalization, normalize, read_pcf, read_ply)
from .losses import contrastive_loss, pool_global
from .model import CompletionModel
from .optim import AdamState, adam_step, clip_global_norm, lr_schedule
from .synthetic import Sample

log = logging.getLogger(__name__)

CSV_HEADER = "epoch,lr,mean_cd,mean_closs,fscore"


@dataclass
class StepStats:
    loss: float
    cd: list[float]
    closs: float
    fscore: list[float]


@dataclass
class TrainResult:
    model: CompletionModel
    metrics: list[dict] = field(default_factory=list)
    best_state: dict | None = None
    best_cd: float = float("inf")
    steps: int = 0

    def metrics_csv(self) -> str:
        buf = _io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for row in self.metrics:
            buf.write(f"{row['epoch']},{row['lr']!r},{row['mean_cd']!r},{row['mean_closs']!r},{row['fscore']!r}\n")
        return buf.getvalue()


def batch_loss(model: CompletionModel, batch: Sequence[Sample], cfg: Config, fscore_d: float | None = None):
    """Weighted Chamfer + contrastive loss over a batch; returns (loss tensor, StepStats)."""
    t = cfg.train
    provider = cfg.image.provider
    outs = [model(s.partial, s.image(provider) if model.uses_image else None) for s in batch]
    cds = [chamfer_loss(o.merged, s.complete) for o, s in zip(outs, batch)]
    cd = cds[0]
    for c in cds[1:]:
        cd = cd + c
    cd = cd * (1.0 / len(batch))
    loss = cd * t.lambda_cd
    closs_val = 0.0
    if model.uses_contrastive:
        g = ad.concat([pool_global(o.fused.projected["g"], t.pool) for o in outs], axis=0)
        v = ad.concat([pool_global(o.fused.projected["I"], t.pool) for o in outs], axis=0)
        closs = contrastive_loss(g, v, t.tau)
        if t.closs_batch_mean:
            closs = closs * (1.0 / len(batch))
        closs_val = closs.item()
        loss = loss + closs * t.lambda_con
    fs = []
    if fscore_d is not None:
        fs = [f_score(o.merged.data, s.complete, fscore_d) for o, s in zip(outs, batch)]
    return loss, StepStats(loss.item(), [c.item() for c in cds], closs_val, fs)


def _param_report(model: CompletionModel) -> str:
    lines = []
    for name, p in model.named_parameters():
        norm = float(np.sqrt((p.data.astype(np.float64) ** 2).sum()))
        gnorm = float(np.sqrt((p.grad.astype(np.float64) ** 2).sum())) if p.grad is not None else 0.0
        lines.append(f"  {name}: |w|={norm:.4g} |g|={gnorm:.4g}")
    return "\n".join(lines)


def train_step(model: CompletionModel, batch, cfg: Config, state: AdamState, lr: float,
               epoch: int = 0, batch_index: int = 0, fscore_d: float | None = None) -> StepStats:
    params = model.parameters()
    model.zero_grad()
    loss, stats = batch_loss(model, batch, cfg, fscore_d)
    if not np.isfinite(stats.loss):
        raise NonFiniteLossError(
            f"non-finite loss {stats.loss} at epoch {epoch}, batch {batch_index}\n{_param_report(model)}"
        )
    loss.backward()
    grads = [p.grad for p in params]
    grads, _ = clip_global_norm(grads, cfg.train.clip_norm)
    adam_step(params, grads, state, lr)
    return stats


def train(cfg: Config, samples: Sequence[Sample], model: CompletionModel | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Adam training with the step schedule; deterministic for a fixed seed.

    Stops after ``train.epochs`` epochs or ``train.max_steps`` steps (if > 0).
    The best-by-mean-CD epoch's parameters are kept in ``best_state``.
    """
    if not samples:
        raise ValueError("training set is empty")
    t = cfg.train
    model = model or CompletionModel(cfg)
    rng = np.random.default_rng(t.seed)
    state = AdamState()
    result = TrainResult(model)
    bs = max(1, min(t.batch_size, len(samples)))
    for epoch in range(t.epochs):
        lr = lr_schedule(epoch, t.lr0, t.lr_drop_epochs, t.lr_factor)
        order = rng.permutation(len(samples))
        cds, closses, fscores = [], [], []
        for b, start in enumerate(range(0, len(order), bs)):
            if t.max_steps and result.steps >= t.max_steps:
                break
            batch = [samples[i] for i in order[start:start + bs]]
            stats = train_step(model, batch, cfg, state, lr, epoch, b, t.fscore_d)
            result.steps += 1
            cds.extend(stats.cd)
            closses.append(stats.closs)
            fscores.extend(stats.fscore)
        if not cds:
            break
        row = OrderedDict(epoch=epoch, lr=lr, mean_cd=float(np.mean(cds)),
                          mean_closs=float(np.mean(closses)), fscore=float(np.mean(fscores)))
        result.metrics.append(row)
        log.info("epoch %d lr %.3g cd %.6f closs %.4f", epoch, lr, row["mean_cd"], row["mean_closs"])
        if row["mean_cd"] < result.best_cd:
            result.best_cd = row["mean_cd"]
            result.best_state = model.state_dict()
        if on_epoch is not None:
            on_epoch(row)
    return result


def predict(model: CompletionModel, sample: Sample) -> np.ndarray:
    image = sample.image(model.cfg.image.provider) if model.uses_image else None
    return model(sample.partial, image).merged.data.copy()


def mean_chamfer(model: CompletionModel, samples: Sequence[Sample]) -> float:
    return float(np.mean([chamfer_l2(predict(model, s), s.complete) for s in samples]))


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalRow:
    category: str
    count: int
    cd: float       # mean chamfer_l2
    fscore: float


def evaluate(predict_fn: Callable[[Sample], np.ndarray], samples: Sequence[Sample], d: float = 0.001,
             categories: Sequence[str] | None = None) -> list[EvalRow]:
    """Per-category mean Chamfer and F-score; categories with no samples are
    dropped with a warning."""
    by_cat: dict[str, list[Sample]] = OrderedDict()
    for c in categories or []:
        by_cat[c] = []
    for s in samples:
        by_cat.setdefault(s.category, []).append(s)
    rows = []
    for cat in sorted(by_cat):
        group = by_cat[cat]
        if not group:
            log.warning("category %s has no samples; omitted", cat)
            continue
        cds, fs = [], []
        for s in group:
            pred = predict_fn(s)
            cds.append(chamfer_l2(pred, s.complete))
            fs.append(f_score(pred, s.complete, d))
        rows.append(EvalRow(cat, len(group), float(np.mean(cds)), float(np.mean(fs))))
    return rows


def format_report(rows: Sequence[EvalRow], d: float) -> str:
    """Text table: CD x 10^3 and F-score@d per category plus the average row."""
    head = f"{'Category':<16}{'N':>6}{'CD(x1e3)':>12}{'F@' + format(d, 'g'):>12}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r.category:<16}{r.count:>6}{r.cd * 1e3:>12.3f}{r.fscore:>12.3f}")
    if rows:
        lines.append("-" * len(head))
        avg_cd = float(np.mean([r.cd for r in rows]))
        avg_f = float(np.mean([r.fscore for r in rows]))
        lines.append(f"{'Avg':<16}{sum(r.count for r in rows):>6}{avg_cd * 1e3:>12.3f}{avg_f:>12.3f}")
    return "\n".join(lines) + "\n"


def report_csv(rows: Sequence[EvalRow]) -> str:
    out = ["category,count,cd_x1e3,fscore"]
    for r in rows:
        out.append(f"{r.category},{r.count},{r.cd * 1e3!r},{r.fscore!r}")
    if rows:
        out.append(f"Avg,{sum(r.count for r in rows)},{float(np.mean([r.cd for r in rows])) * 1e3!r},"
                   f"{float(np.mean([r.fscore for r in rows]))!r}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# directory datasets
# ---------------------------------------------------------------------------

def load_entries(entries: Sequence[DatasetEntry]) -> list[Sample]:
    """Read a dataset index; both clouds are normalised with the ground
    truth's centroid and scale so they stay aligned."""
    out = []
    for e in entries:
        gt = read_ply(e.gt)
        gt_n, centroid, scale = normalize(gt)
        partial = apply_normalization(read_ply(e.partial), centroid, scale)
        feats = read_pcf(e.features) if e.features else None
        out.append(Sample(
            partial=partial.points.astype(np.float32), complete=gt_n.points.astype(np.float32),
            features=feats, pixels=None, category=e.category, id=f"{e.sample}/{e.view}",
        ))
    return out


def save_checkpoint(model: CompletionModel, path, state: dict | None = None) -> None:
    checkpoint.save(state if state is not None else model.state_dict(), path)
