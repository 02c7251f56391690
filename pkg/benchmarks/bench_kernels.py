#!/usr/bin/env python3
"""Benchmark the compiled replica-synthesis kernel against the NumPy
fallback on workloads shaped like the real pipeline stages.

Usage: python benchmarks/bench_kernels.py [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from isacsar.kernels import available_backends, get_backend


def _workloads():
    rng = np.random.default_rng(42)

    def make(n_sub, n_t, n_rep, label):
        syms = np.exp(1j * rng.uniform(0, 2 * np.pi, n_sub))
        delta_f = 400e6 / n_sub
        t_total = 1.0 / delta_f * 1.125
        t_cp = t_total - 1.0 / delta_f
        t = 9.4e-6 + np.arange(n_t) / 400e6
        taus = 9.43e-6 + rng.uniform(0, n_rep / 400e6, n_rep)
        return label, (syms, delta_f, t_cp, t_total, t, taus)

    yield make(256, 320, 64, "dictionary build   (desk, 64 delay atoms)")
    yield make(256, 320, 33, "refinement search  (desk, 33 candidates)")
    yield make(256, 320, 3, "echo render pulse  (desk, 3 paths)")
    yield make(1024, 1280, 16, "dictionary build   (large symbol)")


def bench(repeats: int) -> None:
    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    header = f"{'workload':<42}" + "".join(f"{b:>14}" for b in backends)
    if len(backends) > 1:
        header += f"{'speedup':>10}{'max rel dev':>14}"
    print(header)
    for label, args in _workloads():
        times = {}
        results = {}
        for name in backends:
            impl = get_backend(name)
            impl.replica_rows(*args)  # warm-up
            best = np.inf
            for _ in range(repeats):
                t0 = time.perf_counter()
                out = impl.replica_rows(*args)
                best = min(best, time.perf_counter() - t0)
            times[name] = best
            results[name] = out
        row = f"{label:<42}" + "".join(f"{times[b] * 1e3:>11.2f} ms" for b in backends)
        if len(backends) > 1:
            ref = results["python"]
            dev = np.max(np.abs(results["compiled"] - ref)) / np.max(np.abs(ref))
            row += f"{times['python'] / times['compiled']:>9.1f}x{dev:>14.2e}"
        print(row)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    bench(ap.parse_args().repeats)
