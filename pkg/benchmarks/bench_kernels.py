"""Compiled vs pure-Python ray-marching kernels on the same inputs.

    python benchmarks/bench_kernels.py [--h 0.0625] [--nv 16] [--repeat 3]

Prints the best wall time of each kernel for both backends, the speedup and
the largest absolute difference between their outputs.
"""
import argparse
import time

import numpy as np

from semirte import kernels
from semirte.geometry import Discretization
from semirte.transport import AttenuationCache


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def max_diff(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))


def cases(d, cache, rng):
    g = d.grid
    kg = g.kernel_grid
    cx, cy, dirs, tau_len = cache._args()
    q = np.ascontiguousarray(rng.random((d.nv, g.nx * g.ny)))
    n = 2000
    r, t = 0.95 * np.sqrt(rng.random(n)), 2 * np.pi * rng.random(n)
    px, py = r * np.cos(t), r * np.sin(t)
    a = 2 * np.pi * rng.random(n)
    dx, dy = np.cos(a), np.sin(a)
    length = d.domain.exit_distance(np.column_stack([px, py]), np.column_stack([dx, dy]))
    gcx, gcy = (np.ascontiguousarray(c) for c in g.centers.T)
    return {
        "segment_optical_depth": (px, py, dx, dy, length, cache.sig_full, *kg, cache.h_ray),
        "pair_optical_depth": (gcx, gcy, cache.sig_full, *kg, cache.h_ray, kernels.TAU_CAP),
        "sweep": (cx, cy, dirs, tau_len, q, cache.sig_full, *kg, cache.h_ray, kernels.TAU_CAP),
        "scalar_flux_matrix": (cx, cy, dirs, d.quad.weights, tau_len, cache.sig_full,
                               g.fill_index, *kg, cache.h_ray, kernels.TAU_CAP),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--h", type=float, default=1 / 16)
    ap.add_argument("--nv", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    try:
        compiled = kernels.backend_module("compiled")
    except ImportError:
        raise SystemExit("compiled kernels are not built; run pip install -e .")
    python = kernels.backend_module("python")
    rng = np.random.default_rng(0)
    d = Discretization.unit_disk(h=args.h, nv=args.nv)
    cache = AttenuationCache(d, 0.3 + rng.random(d.n))
    print(f"h = {args.h:g}, nv = {args.nv}, active cells = {d.n}")
    print(f"{'kernel':<24}{'compiled s':>12}{'python s':>12}{'speedup':>10}{'max diff':>12}")
    for name, kargs in cases(d, cache, rng).items():
        tc, oc = best_of(lambda: getattr(compiled, name)(*kargs), args.repeat)
        tp, op = best_of(lambda: getattr(python, name)(*kargs), args.repeat)
        print(f"{name:<24}{tc:>12.4f}{tp:>12.4f}{tp / tc:>10.1f}{max_diff(oc, op):>12.2e}")


if __name__ == "__main__":
    main()
