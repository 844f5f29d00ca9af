#!/usr/bin/env python3
"""Benchmark the compiled kernels against the NumPy fallback.

Times the workload that dominates a simulated round: encoding all class
weights (forward) and backpropagating the prompt gradient, plus the raw
matmul kernel, under each backend. Run after building the extension:

    python3 benchmarks/bench_kernels.py [--k 10] [--d 32] [--depth 2]
"""

import argparse
import importlib
import os
import sys
import time


def run_backend(backend: str, args) -> dict:
    os.environ["FEDPROMPT_KERNELS"] = backend
    for mod in [m for m in sys.modules if m.startswith("fedprompt")]:
        del sys.modules[mod]
    import fedprompt._kernels as K

    assert K.BACKEND == backend, f"wanted {backend}, got {K.BACKEND}"
    import numpy as np

    from fedprompt import backbone as B
    from fedprompt import prompt as P

    bb = B.generate_synthetic_backbone(args.k, args.d, args.depth, 0, 8, 0.05)
    pv = P.init_prompt(args.prompt_len, args.d, 0)
    x = bb.image.features[: args.batch]
    y = bb.image.labels[: args.batch]

    def timeit(fn, min_time=0.5):
        fn()  # warm up
        n, t0 = 0, time.perf_counter()
        while time.perf_counter() - t0 < min_time:
            fn()
            n += 1
        return (time.perf_counter() - t0) / n

    rng = np.random.default_rng(0)
    a = rng.standard_normal((args.d, args.d), dtype=np.float32)
    b = rng.standard_normal((args.d, args.d), dtype=np.float32)
    return {
        "matmul": timeit(lambda: K.matmul(a, b)),
        "encode_classes": timeit(lambda: B.encode_classes(bb, pv.table)),
        "loss_and_grad": timeit(lambda: P.loss_and_grad(pv, x, y, bb)),
    }


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--d", type=int, default=32)
    ap.add_argument("--depth", type=int, default=2)
    ap.add_argument("--prompt-len", type=int, default=8)
    ap.add_argument("--batch", type=int, default=32)
    args = ap.parse_args()

    results = {}
    for backend in ("numpy", "cython"):
        try:
            results[backend] = run_backend(backend, args)
        except RuntimeError as exc:
            print(f"{backend}: unavailable ({exc})")
    if not results:
        return 1

    names = sorted({n for r in results.values() for n in r})
    width = max(len(n) for n in names)
    print(f"\nworkload (k={args.k}, d={args.d}, depth={args.depth}, "
          f"p={args.prompt_len}, batch={args.batch})")
    header = f"{'op':<{width}}  " + "  ".join(f"{b:>12}" for b in results)
    print(header)
    for n in names:
        row = f"{n:<{width}}  " + "  ".join(
            f"{results[b][n] * 1e6:>10.1f}us" for b in results
        )
        if len(results) == 2 and "numpy" in results and "cython" in results:
            row += f"  ({results['numpy'][n] / results['cython'][n]:.1f}x)"
        print(row)
    return 0


if __name__ == "__main__":
    sys.exit(main())
