"""Timing comparison of the two kernel backends (numba @njit vs pure numpy).

Runs every dispatched kernel on a representative workload under each
backend, checks that the outputs agree (bit-identical for integer rasters,
1e-12 for float reductions), and prints per-call medians plus the speedup.

Usage: python benchmarks/bench_kernels.py [--repeats N] [--inner N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from templar import kernels


def _instances(rng, n):
    return (
        rng.integers(0, 3, size=n).astype(np.int64),   # shape codes
        rng.uniform(-0.8, 0.8, size=n),                # cx
        rng.uniform(-0.8, 0.8, size=n),                # cy
        rng.uniform(0.03, 0.25, size=n),               # hw
        rng.uniform(0.03, 0.25, size=n),               # hh
    )


def build_workloads(seed=0):
    rng = np.random.default_rng(seed)
    shapes, cx, cy, hw, hh = _instances(rng, 16)
    colors = rng.integers(1, 5, size=16).astype(np.uint8)
    polyline = rng.uniform(0.02, 0.98, size=(12, 2))
    pa = rng.uniform(0, 1, size=(300, 2))
    pb = rng.uniform(0, 1, size=(300, 2))
    queries = rng.uniform(0, 1, size=(400, 2))
    samples = rng.uniform(0, 1, size=(800, 2))
    parts = rng.integers(0, 10, size=800).astype(np.int32)
    return {
        "paint_layout": (lambda: kernels.paint_layout(
            shapes, cx, cy, hw, hh, colors)),
        "ink_polyline": (lambda: kernels.ink_polyline(polyline)),
        "chamfer_mean": (lambda: kernels.chamfer_mean(pa, pb)),
        "nearest_instance": (lambda: kernels.nearest_instance(
            shapes, cx, cy, hw, hh)),
        "knn_vote": (lambda: kernels.knn_vote(queries, samples, parts, 10)),
    }


def _flatten(result):
    if isinstance(result, tuple):
        return [np.asarray(r) for r in result]
    return [np.asarray(result)]


def check_agreement(workloads):
    for name, fn in workloads.items():
        kernels.use_backend("numpy")
        a = _flatten(fn())
        kernels.use_backend("numba")
        b = _flatten(fn())
        for x, y in zip(a, b):
            if np.issubdtype(x.dtype, np.integer):
                assert (x == y).all(), f"{name}: integer outputs differ"
            else:
                err = float(np.max(np.abs(x - y)))
                assert err < 1e-12, f"{name}: float outputs differ by {err}"


def median_time(fn, repeats, inner):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        times.append((time.perf_counter() - t0) / inner)
    return float(np.median(times))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=7)
    ap.add_argument("--inner", type=int, default=50)
    args = ap.parse_args()

    workloads = build_workloads()
    have_numba = "numba" in kernels.available_backends()
    if have_numba:
        kernels.use_backend("numba")
        for fn in workloads.values():
            fn()  # JIT warmup outside the timed region
        check_agreement(workloads)
        print("backend agreement: OK (integers identical, floats < 1e-12)\n")
    else:
        print("numba backend unavailable; timing numpy only\n")

    header = f"{'kernel':<18}{'numpy (us)':>12}{'numba (us)':>12}{'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, fn in workloads.items():
        kernels.use_backend("numpy")
        t_np = median_time(fn, args.repeats, args.inner)
        if have_numba:
            kernels.use_backend("numba")
            t_nb = median_time(fn, args.repeats, args.inner)
            print(f"{name:<18}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}"
                  f"{t_np / t_nb:>8.1f}x")
        else:
            print(f"{name:<18}{t_np * 1e6:>12.1f}{'-':>12}{'-':>9}")
    kernels.use_backend("auto")


if __name__ == "__main__":
    main()
