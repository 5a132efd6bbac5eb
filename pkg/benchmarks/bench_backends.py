"""Timing comparison of the jit-compiled and pure-numpy kernel backends.

Runs each windowed objective kernel (and the compensated cumulative sum) on
synthetic paths of increasing length under both backends and prints a
median-of-repeats table.  The jit path is warmed up once per kernel so
compilation time is not counted.

Usage: python benchmarks/bench_backends.py [--repeats 7]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from clse_lab import backend, rng

SIZES = (1_000, 100_000, 1_000_000)


def _paths(n: int) -> dict[str, np.ndarray]:
    gen = rng.generator(12345)
    counts = gen.integers(1, 10_000, size=n + 1).astype(np.float64)
    arch = gen.exponential(2.0, size=n + 1)
    return {"counts": counts, "arch": arch, "flat": gen.normal(size=n + 1) ** 2}


def _kernels(paths: dict[str, np.ndarray], n: int):
    return {
        "sse_bgw": lambda: backend.sse_bgw(paths["counts"], 1.5, 0, n),
        "sse_pcr": lambda: backend.sse_pcr(paths["counts"], 800.0, 2.0, 0.25, 0.0, 0, n),
        "sse_pcr_m2": lambda: backend.sse_pcr_m2(paths["counts"], 800.0, 1.0, 50.0, 0, n),
        "sse_arch": lambda: backend.sse_arch(paths["arch"], 1.0, 0.4, 0, n),
        "comp_cumsum": lambda: backend.comp_cumsum(paths["flat"][:n]),
    }


def _time(fn, repeats: int) -> float:
    best = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best.append(time.perf_counter() - t0)
    best.sort()
    return best[len(best) // 2]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=7)
    args = ap.parse_args()

    backends = ["numpy"]
    if backend.NUMBA_AVAILABLE:
        backends.insert(0, "numba")
    else:
        print("jit backend unavailable; timing the numpy path only\n")

    rows = []
    for n in SIZES:
        paths = _paths(n)
        names = list(_kernels(paths, n))
        for name in names:
            timings = {}
            for b in backends:
                backend.set_backend(b)
                fn = _kernels(paths, n)[name]
                fn()  # warm-up (jit compile / cache load)
                timings[b] = _time(fn, args.repeats)
            rows.append((name, n, timings))

    header = f"{'kernel':<12} {'n':>9} " + " ".join(f"{b + ' (ms)':>12}" for b in backends)
    if len(backends) == 2:
        header += f" {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, n, timings in rows:
        line = f"{name:<12} {n:>9d} " + " ".join(
            f"{timings[b] * 1e3:>12.4f}" for b in backends
        )
        if len(backends) == 2:
            ratio = timings["numpy"] / timings["numba"] if timings["numba"] > 0 else float("inf")
            line += f" {ratio:>8.2f}x"
        print(line)
    backend.set_backend("auto")


if __name__ == "__main__":
    main()
