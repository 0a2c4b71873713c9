"""Compare the numba and numpy moment-system kernels.

Usage: python3 benchmarks/bench_kernels.py [--sizes 800 10000 100000] [--repeat 20]

Reports the median wall time of one stacked-moment evaluation (G and J) per
backend and the end-to-end MR solve, and checks the two backends agree.
"""

import argparse
import statistics
import time

import numpy as np

from medrobust import DgpConfig, ModelSpec, generate_dataset, kernels, solve_mr
from medrobust.rng import replicate_rng
from medrobust.systems import MomentSystem


def _median_time(fn, repeat):
    fn()  # warm-up (numba compiles on first call)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench(n, repeat):
    data, _ = generate_dataset(DgpConfig(n=n), replicate_rng(2024, n, "bench"))
    spec = ModelSpec.default(data.p)
    beta = solve_mr(data, spec).params
    row = {"n": n}
    out = {}
    for backend in kernels.BACKENDS:
        kernels.set_backend(backend)
        system = MomentSystem("MR", data, spec)
        out[backend] = system.evaluate(beta)
        row[f"{backend}_eval_ms"] = 1e3 * _median_time(lambda: system.evaluate(beta), repeat)
        row[f"{backend}_solve_ms"] = 1e3 * _median_time(lambda: solve_mr(data, spec), max(3, repeat // 5))
    diff = max(float(np.max(np.abs(out["numba"][k] - out["numpy"][k]))) for k in (0, 1))
    row["max_abs_diff"] = diff
    return row


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[800, 10_000, 100_000])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args(argv)
    previous = kernels.get_backend()
    header = f"{'n':>8} {'numba eval':>11} {'numpy eval':>11} {'speedup':>8} " \
             f"{'numba solve':>12} {'numpy solve':>12} {'max |diff|':>11}"
    print(header)
    try:
        for n in args.sizes:
            r = bench(n, args.repeat)
            print(f"{n:>8} {r['numba_eval_ms']:>9.3f}ms {r['numpy_eval_ms']:>9.3f}ms "
                  f"{r['numpy_eval_ms'] / r['numba_eval_ms']:>7.2f}x "
                  f"{r['numba_solve_ms']:>10.2f}ms {r['numpy_solve_ms']:>10.2f}ms {r['max_abs_diff']:>11.2e}")
    finally:
        kernels.set_backend(previous)


if __name__ == "__main__":
    main()
