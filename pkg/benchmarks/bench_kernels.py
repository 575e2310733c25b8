"""Compare the compiled kernels with the pure-Python fallback.

Usage: python3 benchmarks/bench_kernels.py [--n N] [--repeat R]

Runs each kernel on identical inputs with both backends, checks the outputs
agree, and prints the best-of-R time per backend. The last row times a full
kd-tree build plus Morton ordering in a subprocess per backend.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from sfcpart import kernels

PIPELINE = """
import time
from sfcpart import normalize, generate, build_static_tree, order_points, TreeParams, kernels
ds = normalize(generate("clustered", {n}, 3, seed=1))
best = float("inf")
for _ in range({repeat}):
    t = time.perf_counter()
    order_points(build_static_tree(ds, TreeParams(bucket_size=32)), "morton")
    best = min(best, time.perf_counter() - t)
print(kernels.BACKEND, best)
"""


def cases(n, rng):
    coords = rng.random((n, 3))
    weights = rng.random(n)
    prefix = np.concatenate([[0.0], np.cumsum(weights)])
    total = prefix[-1]
    return {
        "quantize_interleave": lambda k: k.quantize_interleave(coords, 16),
        "range_bbox": lambda k: k.range_bbox(coords, np.arange(n), 0, n),
        "partition_range": lambda k: k.partition_range(coords, np.arange(n), 0, n, 1, 0.5),
        "knapsack_floor": lambda k: k.knapsack_floor(weights, 64, False),
        "window_reach": lambda k: k.window_reach(prefix, 64, total / 64 - 1, 1.0, 1e-12),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    impls = kernels.backends()
    if "compiled" not in impls:
        print("compiled extension not built; only the Python backend is available")
    names = sorted(impls)
    print(f"n={args.n} repeat={args.repeat}")
    print(f"{'kernel':<22}" + "".join(f"{n:>12}" for n in names) + f"{'speedup':>10}")
    for name, fn in cases(args.n, np.random.default_rng(0)).items():
        outs = {b: fn(impls[b]) for b in names}
        assert all(_same(outs[names[0]], outs[b]) for b in names), name
        times = {b: min(timeit.repeat(lambda: fn(impls[b]), number=1, repeat=args.repeat))
                 for b in names}
        speed = times["python"] / times["compiled"] if "compiled" in times else 1.0
        print(f"{name:<22}" + "".join(f"{times[b]:>11.4f}s" for b in names) + f"{speed:>9.1f}x")

    pipe = {}
    for pure in ("1", "0"):
        env = dict(os.environ, SFCPART_PURE=pure)
        out = subprocess.run([sys.executable, "-c", PIPELINE.format(n=args.n, repeat=args.repeat)],
                             env=env, capture_output=True, text=True, check=True).stdout.split()
        pipe[out[0]] = float(out[1])
    speed = pipe["python"] / pipe.get("compiled", pipe["python"])
    print(f"{'build+order (3D)':<22}" + "".join(f"{pipe.get(b, float('nan')):>11.4f}s" for b in names)
          + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
