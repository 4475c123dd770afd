"""Central finite-difference checks for every differentiable op and learned block.

All checks run the engine in float64.  For each sampled coordinate the
numeric derivative ``(f(x+h) - f(x-h)) / 2h`` is compared against the
backward pass; coordinates whose perturbation flips a discrete choice
(a max, a LeakyReLU sign, a top-M selection, a nearest neighbour) are
skipped, since the function is not differentiable across that kink.

The reported error for a block is::

    max_i |analytic_i - numeric_i| / max(max_i |analytic_i|, max_i |numeric_i|)
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import tiny_config
from .decoder import SeedDecoder
from .encoder import AttentionDownsample, GraphDescriptor, HGAEncoder, PointwiseEmbed, PositionalMLP
from .fusion import MSCF, Attention
from .geometry import chamfer_loss
from .image import PatchEncoder
from .losses import contrastive_loss, total_loss

OP_TOL = 1e-4
BLOCK_TOL = 1e-3
STEP = 1e-3


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    checked: int
    skipped: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.error < self.tol


def check_gradients(build: Callable[[], Tensor], tensors: Sequence[Tensor], rng: np.random.Generator,
                    per_tensor: int = 24, h: float = STEP, budget: int | None = None) -> tuple[float, int, int]:
    """Compare analytic and numeric gradients of ``build()`` w.r.t. ``tensors``.

    ``build`` must recompute the scalar loss from the tensors' current data.
    Returns ``(relative error, coordinates checked, coordinates skipped)``.
    """
    for t in tensors:
        t.grad = None
    with ad.record_branches() as base:
        loss = build()
    loss.backward()
    coords = []
    for t in tensors:
        k = min(per_tensor, t.data.size)
        for i in rng.choice(t.data.size, size=k, replace=False):
            coords.append((t, int(i)))
    if budget is not None and len(coords) > budget:
        pick = rng.choice(len(coords), size=budget, replace=False)
        coords = [coords[i] for i in sorted(pick)]
    analytic, numeric = [], []
    skipped = 0
    for t, i in coords:
        flat = t.data.reshape(-1)
        g = 0.0 if t.grad is None else float(t.grad.reshape(-1)[i])
        orig = flat[i]
        flat[i] = orig + h
        with ad.record_branches() as sig_p:
            fp = float(build().data)
        flat[i] = orig - h
        with ad.record_branches() as sig_m:
            fm = float(build().data)
        flat[i] = orig
        if sig_p != base or sig_m != base:
            skipped += 1
            continue
        analytic.append(g)
        numeric.append((fp - fm) / (2 * h))
    if not analytic:
        return float("inf"), 0, skipped
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    scale = max(np.abs(a).max(), np.abs(n).max(), 1e-12)
    return float(np.abs(a - n).max() / scale), len(a), skipped


def _probe(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    """Fixed random linear functional turning any output into a scalar."""
    w = Tensor(rng.normal(size=out.shape))
    return lambda y: (y * w).sum()


def _leaf(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True)


# ---------------------------------------------------------------------------
# individual checks; each returns (build, tensors)
# ---------------------------------------------------------------------------

def _op_matmul(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 2)
    probe = _probe(Tensor(np.zeros((3, 2))), rng)
    return (lambda: probe(ad.matmul(a, b))), [a, b]


def _op_batched_matmul(rng):
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 4, 5)
    probe = _probe(Tensor(np.zeros((2, 3, 5))), rng)
    return (lambda: probe(ad.matmul(a, b))), [a, b]


def _op_softmax(rng):
    x = _leaf(rng, 4, 5)
    probe = _probe(x, rng)
    return (lambda: probe(ad.softmax_rows(x))), [x]


def _op_log_softmax(rng):
    x = _leaf(rng, 4, 5)
    probe = _probe(x, rng)
    return (lambda: probe(ad.log_softmax_rows(x))), [x]


def _op_group_norm(rng):
    x, s, b = _leaf(rng, 6, 16), _leaf(rng, 16), _leaf(rng, 16)
    probe = _probe(x, rng)
    return (lambda: probe(ad.group_norm(x, 4, s, b))), [x, s, b]


def _op_leaky_relu(rng):
    x = _leaf(rng, 5, 6)
    # keep entries away from the kink at 0
    x.data += np.sign(x.data) * 0.05
    probe = _probe(x, rng)
    return (lambda: probe(ad.leaky_relu(x, 0.2))), [x]


def _op_max_over_neighbors(rng):
    x = _leaf(rng, 6, 4, 8)
    probe = _probe(Tensor(np.zeros((6, 8))), rng)
    return (lambda: probe(ad.max_over_neighbors(x))), [x]


def _op_concat(rng):
    a, b = _leaf(rng, 5, 2), _leaf(rng, 5, 3)
    probe = _probe(Tensor(np.zeros((5, 5))), rng)
    return (lambda: probe(ad.concat([a, b], axis=1))), [a, b]


def _op_gather_rows(rng):
    x = _leaf(rng, 5, 3)
    idx = rng.integers(0, 5, size=(4, 3))
    probe = _probe(Tensor(np.zeros((4, 3, 3))), rng)
    return (lambda: probe(ad.gather_rows(x, idx))), [x]


def _op_elementwise(rng):
    a, b = _leaf(rng, 4, 3), _leaf(rng, 3)
    b.data = np.abs(b.data) + 0.5
    probe = _probe(a, rng)
    return (lambda: probe(ad.sigmoid(a) * b + ad.exp(a * 0.3) / b - ad.sqrt(b) + ad.log(b))), [a, b]


def _op_chamfer(rng):
    p, q = _leaf(rng, 12, 3), _leaf(rng, 9, 3)
    return (lambda: chamfer_loss(p, q)), [p, q]


def _block_pointwise_embed(rng):
    m = PointwiseEmbed(8, rng)
    x = _leaf(rng, 10, 3)
    probe = _probe(Tensor(np.zeros((10, 8))), rng)
    return (lambda: probe(m(x))), [x] + m.parameters()


def _block_graph_descriptor(rng):
    # four channels per group; two-channel groups make the FD truncation term dominate
    m = GraphDescriptor(4, 16, 3, rng, groups=4)
    coords = rng.normal(size=(12, 3))
    f = _leaf(rng, 12, 4)
    probe = _probe(Tensor(np.zeros((12, 16))), rng)
    return (lambda: probe(m(coords, f))), [f] + m.parameters()


def _block_attention_downsample(rng):
    m = AttentionDownsample(6, rng)
    coords = rng.normal(size=(10, 3))
    f = _leaf(rng, 10, 6)
    probe = _probe(Tensor(np.zeros((5, 6))), rng)
    return (lambda: probe(m(coords, f, 5)[1])), [f] + m.parameters()


def _block_add_positional(rng):
    m = PositionalMLP(6, 2, rng)
    coords = rng.uniform(-1, 1, size=(7, 3))
    f = _leaf(rng, 7, 6)
    probe = _probe(Tensor(np.zeros((7, 6))), rng)
    return (lambda: probe(m(f, coords))), [f] + m.parameters()


def _block_encoder(rng):
    cfg = tiny_config().encoder
    m = HGAEncoder(cfg, rng)
    coords = rng.normal(size=(64, 3))
    p1 = _probe(Tensor(np.zeros((cfg.n_local, cfg.latent))), rng)
    p2 = _probe(Tensor(np.zeros((cfg.n_global, cfg.latent))), rng)

    def build():
        out = m(coords)
        return p1(out.local) + p2(out.glob)

    return build, m.parameters()


def _block_patch_encode(rng):
    m = PatchEncoder(8, 8, rng)
    img = rng.uniform(0, 1, size=(16, 16, 3))
    probe = _probe(Tensor(np.zeros((4, 8))), rng)
    return (lambda: probe(m(img))), m.parameters()


def _block_project(rng):
    m = MSCF(6, 5, 7, 8, 2, rng)
    fg, fl, fi = _leaf(rng, 3, 6), _leaf(rng, 5, 5), _leaf(rng, 4, 7)
    pg, pl, pi = (_probe(Tensor(np.zeros((n, 8))), rng) for n in (3, 5, 4))

    def build():
        p = m.project(fg, fl, fi)
        return pg(p["g"]) + pl(p["l"]) + pi(p["I"])

    params = m.psi_g.parameters() + m.psi_l.parameters() + m.psi_I.parameters()
    return build, [fg, fl, fi] + params


def _block_attention(rng):
    m = Attention(8, 2, rng)
    q, kv = _leaf(rng, 4, 8), _leaf(rng, 6, 8)
    probe = _probe(Tensor(np.zeros((4, 8))), rng)
    return (lambda: probe(m(q, kv))), [q, kv] + m.parameters()


def _block_fuse(rng):
    m = MSCF(8, 8, 8, 8, 2, rng)
    fg, fl, fi = _leaf(rng, 3, 8), _leaf(rng, 6, 8), _leaf(rng, 4, 8)
    probe = _probe(Tensor(np.zeros((3 * 3 + 2 * 6, 8))), rng)
    return (lambda: probe(m(fg, fl, fi).tokens)), [fg, fl, fi] + m.parameters()


def _block_decoder(rng):
    cfg = tiny_config().decoder
    m = SeedDecoder(8, cfg, rng)
    tokens = _leaf(rng, 10, 8)
    probe = _probe(Tensor(np.zeros((cfg.m_gen, 3))), rng)
    return (lambda: probe(m(tokens))), [tokens] + m.parameters()


def _block_contrastive(rng):
    g, v = _leaf(rng, 4, 6), _leaf(rng, 4, 6)
    return (lambda: contrastive_loss(g, v, 0.5)), [g, v]


def _block_total_loss(rng):
    pred, gt = _leaf(rng, 20, 3), Tensor(rng.normal(size=(16, 3)))
    g, v = _leaf(rng, 3, 5), _leaf(rng, 3, 5)
    return (lambda: total_loss(pred, gt, g, v, 0.8, 0.2, 0.5)), [pred, g, v]


def _block_pipeline(rng):
    from .model import CompletionModel
    from .synthetic import make_dataset
    from .train import batch_loss

    cfg = tiny_config()
    model = CompletionModel(cfg, seed=int(rng.integers(1 << 30)))
    batch = make_dataset(cfg.synthetic, 2, int(rng.integers(1 << 30)))
    return (lambda: batch_loss(model, batch, cfg)[0]), model.parameters()


OPS = {
    "matmul": _op_matmul,
    "batched_matmul": _op_batched_matmul,
    "softmax_rows": _op_softmax,
    "log_softmax_rows": _op_log_softmax,
    "group_norm": _op_group_norm,
    "leaky_relu": _op_leaky_relu,
    "max_over_neighbors": _op_max_over_neighbors,
    "concat": _op_concat,
    "gather_rows": _op_gather_rows,
    "elementwise": _op_elementwise,
    "chamfer_loss": _op_chamfer,
}

BLOCKS = {
    "pointwise_embed": _block_pointwise_embed,
    "graph_descriptor": _block_graph_descriptor,
    "attention_downsample": _block_attention_downsample,
    "add_positional": _block_add_positional,
    "hga_encoder": _block_encoder,
    "patch_encode": _block_patch_encode,
    "project": _block_project,
    "attention": _block_attention,
    "fuse": _block_fuse,
    "decoder": _block_decoder,
    "contrastive_loss": _block_contrastive,
    "total_loss": _block_total_loss,
    "pipeline": _block_pipeline,
}


def run_check(name: str, seed: int = 0) -> CheckResult:
    factory = OPS.get(name) or BLOCKS[name]
    tol = OP_TOL if name in OPS else BLOCK_TOL
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    with ad.precision(np.float64):
        build, tensors = factory(rng)
        per_tensor = 6 if name == "pipeline" else 24
        budget = 2000 if name == "pipeline" else None
        err, n, skipped = check_gradients(build, tensors, rng, per_tensor=per_tensor, budget=budget)
    return CheckResult(name, err, tol, n, skipped, time.perf_counter() - t0)


def run_suite(seed: int = 0, names: Sequence[str] | None = None, faults: Sequence[str] = ()) -> list[CheckResult]:
    names = list(names or [*OPS, *BLOCKS])
    with ad.inject_fault(*faults):
        return [run_check(n, seed) for n in names]


def format_results(results: Sequence[CheckResult]) -> str:
    lines = [f"{'check':<22}{'max rel err':>14}{'tol':>9}{'coords':>8}{'skipped':>9}  result"]
    for r in results:
        kind = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:<22}{r.error:>14.3e}{r.tol:>9.0e}{r.checked:>8}{r.skipped:>9}  {kind}")
    return "\n".join(lines)
