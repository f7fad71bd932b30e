"""
Compiled versus pure-Python geodesic kernels.

    python bench/benchmark.py [--repeat 3]

Times the three hot kernels (single path integration, batched box crossing,
batched quadrature nodes along the flow) on the flat, conformal and warped
metrics with each backend and prints the speed-up.
"""
import argparse
import os
import time

import numpy as np

from relboltz import kernels
from relboltz.geodesics import exit_times, geodesic_flow
from relboltz.spacetime import conformal_minkowski, diagonal_warped, minkowski

SPECS = {
    "flat": minkowski(3),
    "conformal": conformal_minkowski(3, 0.1, [0.05, 0.2, -0.1]),
    "warped": diagonal_warped(3, (1.0, 0.3, 0.1)),
}


def workloads(spec, rng):
    X = rng.uniform([0.5, -0.5, -0.5], [1.5, 0.5, 0.5], (2000, 3))
    P = np.column_stack([np.ones(2000), rng.uniform(-0.6, 0.6, (2000, 2))])
    K = (np.array([0.0, -0.3, -0.3]), np.array([0.8, 0.3, 0.3]))
    s_a = np.zeros(2000)
    s_b = np.full(2000, 0.5)
    return {
        "path (20k steps)": lambda: geodesic_flow(spec, [0.0, 0.1, -0.2], [1.0, 0.3, 0.2], 2.0, 1e-4),
        "box crossing (2000 rays)": lambda: exit_times(spec, X, P, K, 1e-2),
        "flow nodes (2000 rays)": lambda: kernels.flow_nodes(spec, X, P, s_a, s_b, 1e-2, 5e-2, 4),
    }


def best_of(fn, repeat):
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return min(out)


def run(repeat=3):
    rows = []
    for name, spec in SPECS.items():
        for label, fn in workloads(spec, np.random.default_rng(0)).items():
            os.environ.pop("RELBOLTZ_PURE_PYTHON", None)
            fast = best_of(fn, repeat) if kernels.compiled_available() else float("nan")
            os.environ["RELBOLTZ_PURE_PYTHON"] = "1"
            slow = best_of(fn, repeat)
            os.environ.pop("RELBOLTZ_PURE_PYTHON", None)
            rows.append((name, label, fast, slow))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not kernels.compiled_available():
        print("compiled extension not available; only the Python backend is timed")
    print(f"{'metric':<10} {'workload':<26} {'compiled [s]':>13} {'python [s]':>11} {'speed-up':>9}")
    for name, label, fast, slow in run(args.repeat):
        print(f"{name:<10} {label:<26} {fast:13.4f} {slow:11.4f} {slow / fast:9.1f}")


if __name__ == "__main__":
    main()
