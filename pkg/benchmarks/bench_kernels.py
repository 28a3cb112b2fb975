"""Time each kernel under the numba and numpy implementations.

    python benchmarks/bench_kernels.py [--repeat 20]

Numba timings exclude the first (compiling) call.
"""

import argparse
import timeit
from itertools import combinations

import numpy as np

from meshchaos import kernels
from meshchaos._accel import HAS_NUMBA


def problems(rng):
    domains = [4] * 12
    combos = np.array(list(combinations(range(12), 3)), dtype=np.int64)
    strides = np.tile(np.array([16, 4, 1], dtype=np.int64), (len(combos), 1))
    offsets = np.arange(len(combos), dtype=np.int64) * 64
    uncovered = rng.random(len(combos) * 64) < 0.5
    cands = rng.integers(0, 4, size=(1000, len(domains))).astype(np.int64)
    seq = rng.integers(0, 20, size=200_000).astype(np.int64)
    x = np.sort(rng.random(20_000))
    y_reg = rng.random((20_000, 1))
    y_cls = np.eye(4)[rng.integers(0, 4, size=20_000)]
    return {
        "tuple_scores": (cands, combos, strides, offsets, uncovered),
        "tuple_codes": (cands, combos, strides, offsets),
        "transition_counts": (seq, 20),
        "symbol_counts": (seq, 20),
        "best_split": (x, y_reg, 5, kernels.SSE),
        "best_split/gini": (x, y_cls, 5, kernels.GINI),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not HAS_NUMBA:
        print("numba is not installed; the numba column runs the plain loops")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for label, call_args in problems(rng).items():
        name = label.split("/")[0]
        row = []
        for backend in ("numpy", "numba"):
            fn = kernels.IMPLEMENTATIONS[backend][name]
            fn(*call_args)  # warm-up and compile
            row.append(min(timeit.repeat(lambda: fn(*call_args), number=1, repeat=args.repeat)) * 1e3)
        print(f"{label:<20}{row[0]:>12.3f}{row[1]:>12.3f}{row[0] / row[1]:>9.1f}x")


if __name__ == "__main__":
    main()
