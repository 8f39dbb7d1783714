"""Compare the compiled and pure-Python kernel backends.

Run with ``python benchmarks/bench_kernels.py [--T 2000] [--repeat 5]``.
Each kernel is timed on identical inputs for every importable backend and the
outputs are checked for equality before timings are reported.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from dialseg.kernels import backends


def make_inputs(T: int, C: int, seed: int):
    rng = np.random.default_rng(seed)
    sims = np.clip(rng.normal(0.6, 0.2, size=T - 1), -1.0, 1.0)
    depths = rng.random(T - 1)
    codes = rng.integers(-1, C, size=T)
    stops = np.unique(np.concatenate([np.sort(rng.choice(np.arange(1, T), size=min(T - 1, T // 10), replace=False)), [T]]))
    return sims, depths, codes.astype(np.int64), stops.astype(np.int64)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, default=2000)
    ap.add_argument("--C", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    sims, depths, codes, stops = make_inputs(args.T, args.C, args.seed)
    threshold = float(depths.mean())
    cases = {
        "depth_scores": lambda m: m.depth_scores(sims, 2),
        "greedy_select": lambda m: m.greedy_select(depths, threshold, 3, args.T - 1),
        "segment_counts": lambda m: m.segment_counts(codes, stops, args.C),
    }
    impls = backends()
    if "cython" not in impls:
        print("compiled backend not built; timing the Python fallback only")
    print(f"T={args.T} C={args.C} repeat={args.repeat}")
    print(f"{'kernel':<16}" + "".join(f"{name:>14}" for name in impls) + ("   speedup" if len(impls) > 1 else ""))
    for name, call in cases.items():
        outputs = {b: call(m) for b, m in impls.items()}
        ref = outputs["python"]
        for b, out in outputs.items():
            np.testing.assert_array_equal(out, ref, err_msg=f"{name}: {b} disagrees with python")
        times = {b: min(timeit.repeat(lambda m=m: call(m), number=1, repeat=args.repeat)) for b, m in impls.items()}
        row = f"{name:<16}" + "".join(f"{times[b] * 1e3:>12.3f}ms" for b in impls)
        if "cython" in times:
            row += f"   {times['python'] / times['cython']:7.1f}x"
        print(row)


if __name__ == "__main__":
    main()
