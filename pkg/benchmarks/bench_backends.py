"""Compare the compiled kernel core with the numpy fallback.

    python3 benchmarks/bench_backends.py [--repeat 5]

Times each hot kernel on identical inputs plus whole fits of both solvers,
and reports the largest relative difference between the two backends'
outputs (libm and numpy disagree in the last ulp on some logarithms).
"""

import argparse
import time

import numpy as np

from mrvr import backend
from mrvr.baseline import fit_baseline
from mrvr.fast import fit_fast
from mrvr.kernels import KernelConfig
from mrvr.sim import SimConfig, sample_dataset


def best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def kernel_cases(rng):
    N, V = 200, 5
    X = rng.uniform(-10, 10, size=(N, 1))
    K = N + 1
    sp = rng.uniform(0.1, 5.0, size=K)
    rp = rng.uniform(0.0, 20.0, size=K)
    alpha = np.where(rng.random(K) < 0.1, rng.uniform(0.5, 50.0, size=K), np.inf)
    spv = rng.uniform(0.1, 5.0, size=(K, V))
    qpv = rng.normal(0.0, 3.0, size=(K, V))
    return {
        "gaussian_gram 200x200": lambda k: k.gaussian_gram(X, X, 1.6),
        "fast_scores K=201": lambda k: k.fast_scores(sp, rp, alpha, V),
        "baseline_scores K=201 V=5": lambda k: k.baseline_scores(spv, qpv, alpha),
    }


def fit_cases(rng):
    data = sample_dataset(SimConfig(V=5, N=100), rng)
    cfg = KernelConfig(1.6)
    grid = np.linspace(-10, 10, 200)[:, None]
    # compare predictions, which stay comparable even if the chosen bases differ
    return {
        "fit_fast V=5 N=100": lambda k: fit_fast(data.X, data.T, cfg).predict(grid)[0],
        "fit_baseline V=5 N=100": lambda k: fit_baseline(data.X, data.T, cfg).predict(grid)[0],
    }


def max_rel_diff(a, b):
    """Largest relative difference over finite entries; inf if shapes or inf-patterns differ."""
    if isinstance(a, tuple):
        return max(max_rel_diff(x, y) for x, y in zip(a, b))
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or not np.array_equal(np.isfinite(a), np.isfinite(b)):
        return float("inf")
    f = np.isfinite(a)
    if not f.any():
        return 0.0
    return float(np.max(np.abs(a[f] - b[f]) / np.maximum(1.0, np.abs(a[f]))))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    names = backend.available()
    if "compiled" not in names:
        print("compiled core not built; only the fallback is available")
        return 1
    rng = np.random.default_rng(args.seed)
    cases = {**kernel_cases(rng), **fit_cases(rng)}
    print(f"{'case':<28}{'compiled':>12}{'pure':>12}{'speed-up':>10}{'max rel diff':>14}")
    for name, fn in cases.items():
        timings, outputs = {}, {}
        for b in ("compiled", "pure"):
            kern = backend.use(b)
            timings[b], outputs[b] = best_of(lambda: fn(kern), args.repeat)
        ratio = timings["pure"] / timings["compiled"]
        print(f"{name:<28}{timings['compiled'] * 1e3:>10.2f}ms{timings['pure'] * 1e3:>10.2f}ms"
              f"{ratio:>9.1f}x{max_rel_diff(outputs['compiled'], outputs['pure']):>14.2e}")
    backend.use(names[0])
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
