"""Benchmark the compiled Jacobi eigensolver against the numpy fallback.

Run: python3 benchmarks/bench_kernels.py [--sizes 2,4,6,8] [--batch 512]
"""

import argparse
import time

import numpy as np

from beamlearn.kernels import compiled, jacobi_py

if compiled is not None:
    from beamlearn.kernels import _jacobi as jacobi_c
else:
    jacobi_c = None


def make_batch(rng, batch, d):
    a = rng.normal(size=(batch, d, d)) + 1j * rng.normal(size=(batch, d, d))
    h = a @ np.conj(np.swapaxes(a, -1, -2)) + d * np.eye(d)
    return h


def bench(fn, h, repeats):
    fn(h)  # warm up
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(h)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="2,4,6,8")
    ap.add_argument("--batch", type=int, default=512)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    sizes = [int(s) for s in args.sizes.split(",")]
    print(f"batch = {args.batch}, best of {args.repeats}")
    print(f"{'D':>3} {'numpy [ms]':>12} {'compiled [ms]':>14} {'speedup':>9} "
          f"{'max |dev|':>11}")
    for d in sizes:
        h = make_batch(rng, args.batch, d)
        t_py = bench(jacobi_py.eigh_batch, h, args.repeats)
        row = f"{d:>3} {1e3 * t_py:12.2f}"
        if jacobi_c is None:
            print(row + "  (compiled kernel unavailable)")
            continue
        t_c = bench(jacobi_c.eigh_batch, h, args.repeats)
        wp, vp = jacobi_py.eigh_batch(h)
        wc, vc = jacobi_c.eigh_batch(h)
        dev = max(np.abs(wp - wc).max(),
                  np.abs(np.abs(vp) - np.abs(vc)).max())
        print(row + f" {1e3 * t_c:14.2f} {t_py / t_c:9.2f}x {dev:11.2e}")


if __name__ == "__main__":
    main()
