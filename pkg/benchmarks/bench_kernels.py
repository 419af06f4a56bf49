"""Compiled vs NumPy kernel timings.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per (kernel, structure, n) with the best-of-repeat wall
time for each backend and the speed-up of the compiled one.
"""

import argparse
import time

import numpy as np

from mrfgnn import kernels
from mrfgnn.classical import bp_max_product, bp_sum_product, mean_field, trbp
from mrfgnn.model import build_topology, sample_mrf
from mrfgnn.oracle import enumerate_mrf

CASES = [("enumerate", enumerate_mrf), ("bp", bp_sum_product), ("max-product", bp_max_product),
         ("trbp", trbp), ("mean-field", mean_field)]


def best_time(fn, models, backend, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        for m in models:
            fn(m, backend=backend)
        times.append(time.perf_counter() - t0)
    return min(times) / len(models)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--models", type=int, default=10)
    args = ap.parse_args(argv)
    backends = kernels.available()
    if "compiled" not in backends:
        print("compiled extension not built; only the NumPy backend is available")
    print(f"{'kernel':<12} {'structure':<10} {'n':>3} " + " ".join(f"{b:>12}" for b in backends)
          + ("   speed-up" if len(backends) == 2 else ""))
    for name, fn in CASES:
        for kind, n in (("grid", 9), ("complete", 9), ("grid", 16), ("complete", 16)):
            rng = np.random.default_rng(0)
            models = [sample_mrf(build_topology(kind, n), rng) for _ in range(args.models)]
            t = {b: best_time(fn, models, b, args.repeat) for b in backends}
            line = f"{name:<12} {kind:<10} {n:>3} " + " ".join(f"{t[b] * 1e3:10.3f}ms" for b in backends)
            if len(backends) == 2:
                line += f"   {t['python'] / t['compiled']:8.1f}x"
            print(line, flush=True)


if __name__ == "__main__":
    main()
