"""Time the numba and numpy backends of each hot kernel.

    python benchmarks/bench_kernels.py [--sizes 512 2048] [--repeat 5]

Both backends are checked for identical output before timing.  The numba
column excludes the one-off JIT compile, which is reported separately.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from pcc import kernels


def _cases(n: int, rng: np.random.Generator):
    pts = rng.normal(size=(n, 3))
    other = rng.normal(size=(n, 3))
    idx = rng.integers(0, n, size=n)
    src = rng.normal(size=(n, 64))
    return {
        "knn k=16": lambda f: f(pts, 16),
        "fps m=n/4": lambda f: f(pts, n // 4, 0),
        "nearest": lambda f: f(pts, other),
        "scatter_add": lambda f: f(np.zeros((n, 64)), idx, src),
    }


_NAMES = {"knn k=16": "knn", "fps m=n/4": "fps", "nearest": "nearest", "scatter_add": "scatter_add_rows"}


def _best(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[512, 2048])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        print("numba not installed; only the numpy backend is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<14}{'N':>6}{'numpy ms':>12}{'numba ms':>12}{'speedup':>9}{'compile s':>11}")
    for n in args.sizes:
        for label, call in _cases(n, rng).items():
            name = _NAMES[label]
            np_fn = kernels.BACKENDS["numpy"][name]
            t_np = _best(lambda: call(np_fn), args.repeat)
            if not kernels.HAVE_NUMBA:
                print(f"{label:<14}{n:>6}{t_np * 1e3:>12.2f}{'-':>12}{'-':>9}{'-':>11}")
                continue
            nb_fn = kernels.BACKENDS["numba"][name]
            t0 = time.perf_counter()
            out_nb = call(nb_fn)
            compile_s = time.perf_counter() - t0
            if not _same(out_nb, call(np_fn)):
                raise SystemExit(f"{label}: backends disagree at N={n}")
            t_nb = _best(lambda: call(nb_fn), args.repeat)
            print(f"{label:<14}{n:>6}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}{t_np / t_nb:>8.1f}x{compile_s:>11.2f}")


if __name__ == "__main__":
    main()
