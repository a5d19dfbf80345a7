#!/usr/bin/env python3
"""Time the compiled kernel core against the numpy fallback.

Usage:
    python3 benchmarks/bench_kernels.py [--threads N] [--repeat K]

Prints one row per (kernel, size) with both backends and the speedup. The
compiled core must be built (pip install -e . --no-build-isolation) for the
native column to appear.
"""

import argparse
import time

import numpy as np

from reidkit import kernels
from reidkit.rerank import EcnParams, KReciprocalParams, ecn_rerank, k_reciprocal_rerank


def timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_euclidean(rng, threads, repeat):
    rows = []
    for nq, ng, dim in [(500, 2000, 64), (1000, 4000, 128)]:
        q, g = rng.normal(size=(nq, dim)), rng.normal(size=(ng, dim))
        rows.append((
            f"euclidean {nq}x{ng}x{dim}",
            {
                backend: timeit(
                    lambda b=backend: kernels.euclidean_distances(q, g, backend=b, threads=threads),
                    repeat,
                )
                for backend in kernels.available_backends()
            },
        ))
    return rows


def bench_jaccard(rng, threads, repeat):
    rows = []
    for n, num_query, nnz in [(1500, 300, 30), (3000, 600, 30)]:
        encoding = np.zeros((n, n))
        for i in range(n):
            cols = rng.choice(n, size=nnz, replace=False)
            weights = rng.random(nnz) + 0.01
            encoding[i, cols] = weights / weights.sum()
        rows.append((
            f"jaccard n={n} q={num_query}",
            {
                backend: timeit(
                    lambda b=backend: kernels.jaccard_from_encoding(
                        encoding, num_query, backend=b, threads=threads
                    ),
                    repeat,
                )
                for backend in kernels.available_backends()
            },
        ))
    return rows


def bench_ecn(rng, threads, repeat):
    rows = []
    for n, num_query, t in [(1500, 300, 4), (3000, 600, 4)]:
        dist = rng.random((n, n))
        dist = (dist + dist.T) / 2
        np.fill_diagonal(dist, 0.0)
        order = np.argsort(dist, axis=1, kind="stable")
        neighbors = np.stack([row[row != i][:t] for i, row in enumerate(order)])
        rows.append((
            f"ecn n={n} q={num_query} t={t}",
            {
                backend: timeit(
                    lambda b=backend: kernels.ecn_accumulate(
                        dist, neighbors, num_query, backend=b, threads=threads
                    ),
                    repeat,
                )
                for backend in kernels.available_backends()
            },
        ))
    return rows


def bench_pipelines(rng, threads, repeat):
    """End-to-end re-ranking, which mixes kernel and orchestration time."""
    n, num_query, dim = 1200, 200, 32
    points = rng.normal(size=(n, dim))
    full = kernels.euclidean_distances(points, points, threads=threads)
    qg = full[:num_query, num_query:]
    qq = full[:num_query, :num_query]
    gg = full[num_query:, num_query:]
    rows = []
    for label, fn in [
        ("k-reciprocal 200+1000", lambda b: k_reciprocal_rerank(
            qg, qq, gg, KReciprocalParams(), backend=b, threads=threads)),
        ("ecn 200+1000", lambda b: ecn_rerank(
            qg, qq, gg, EcnParams(), backend=b, threads=threads)),
    ]:
        rows.append((
            label,
            {
                backend: timeit(lambda b=backend: fn(b), repeat)
                for backend in kernels.available_backends()
            },
        ))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--threads", type=int, default=0)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    threads = args.threads if args.threads > 0 else None

    rng = np.random.default_rng(0)
    rows = []
    rows += bench_euclidean(rng, threads, args.repeat)
    rows += bench_jaccard(rng, threads, args.repeat)
    rows += bench_ecn(rng, threads, args.repeat)
    rows += bench_pipelines(rng, threads, args.repeat)

    backends = kernels.available_backends()
    header = f"{'case':32s}" + "".join(f"{b:>12s}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10s}"
    print(header)
    print("-" * len(header))
    for label, times in rows:
        line = f"{label:32s}" + "".join(f"{times[b] * 1e3:10.1f}ms" for b in backends)
        if len(backends) == 2:
            line += f"{times['numpy'] / times['native']:9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
