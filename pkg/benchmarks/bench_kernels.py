#!/usr/bin/env python3
"""Compare the numba and numpy kernels.

Times the exact distance transform and the assignment solver on random
inputs, checks both backends agree, and prints one row per case.

Usage:
  python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""

import argparse
import json
import sys
import timeit

import numpy as np

from ocpose import kernels


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def edt_cases(rng):
    for h, w, density in ((64, 64, 0.05), (256, 256, 0.01), (480, 640, 0.02)):
        yield f"edt {h}x{w} p={density}", rng.random((h, w)) < density


def lsa_cases(rng):
    for n in (10, 50, 200):
        yield f"assignment {n}x{n}", rng.random((n, n))


def run(repeat):
    if not kernels.HAVE_NUMBA:
        sys.exit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(0)
    rows = []
    pairs = [
        (edt_cases(rng), kernels.edt_sq_numba, kernels.edt_sq_numpy, np.array_equal),
        (lsa_cases(rng), kernels.linear_assignment_numba, kernels.linear_assignment_numpy, np.array_equal),
    ]
    for cases, fast, slow, same in pairs:
        for name, arg in cases:
            fast(arg)  # compile outside the timed region
            agree = bool(same(fast(arg), slow(arg)))
            t_fast = best_of(lambda: fast(arg), repeat)
            t_slow = best_of(lambda: slow(arg), repeat)
            rows.append({"case": name, "numba_ms": 1e3 * t_fast, "numpy_ms": 1e3 * t_slow, "agree": agree})
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write rows to this file")
    args = ap.parse_args(argv)

    rows = run(args.repeat)
    print(f"{'case':<28} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}  agree")
    for r in rows:
        speedup = r["numpy_ms"] / r["numba_ms"] if r["numba_ms"] > 0 else float("inf")
        print(f"{r['case']:<28} {r['numba_ms']:10.3f} {r['numpy_ms']:10.3f} {speedup:8.1f}  {r['agree']}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0 if all(r["agree"] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
