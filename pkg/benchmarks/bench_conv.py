"""Compare the compiled and numpy convolution backends on desk-scale shapes.

    python benchmarks/bench_conv.py [--repeat 20] [--json out.json]

Both backends are imported directly, so one run times both regardless of
which one the engine selected. Each row also reports the max relative
difference between the two outputs.
"""

import argparse
import json
import time

import numpy as np

from netbooster.engine import _conv_numpy
from netbooster.engine.conv import worker_count

try:
    from netbooster.engine import _conv_ext
except ImportError:
    _conv_ext = None

# (name, N, C_in, H, W, k, C_out, stride, groups) as found in the desk-scale TNN and its expansion
CASES = [
    ("stem 3x3", 64, 1, 14, 14, 3, 8, 1, 1),
    ("pointwise 16->16", 64, 16, 6, 6, 1, 16, 1, 1),
    ("expanded pw 16->96", 64, 16, 6, 6, 1, 96, 1, 1),
    ("depthwise 3x3 s2", 64, 16, 14, 14, 3, 16, 2, 16),
    ("depthwise 96 1x1", 64, 96, 6, 6, 1, 96, 1, 96),
]


def _run(impl, op, args, threads):
    x, k, dy, stride, groups, out, dx, partial = args
    if op == "forward":
        impl.conv_valid(x, k, out, stride, groups, threads)
        return out
    if op == "grad_input":
        dx[...] = 0
        impl.conv_valid_grad_input(dy, k, dx, stride, groups, threads)
        return dx
    partial[...] = 0
    impl.conv_valid_grad_kernel(dy, x, partial, stride, groups, threads)
    return partial.sum(axis=0)


def bench(repeat=20, dtype="float32"):
    rng = np.random.default_rng(0)
    threads = worker_count()
    rows = []
    for name, n, c, h, w, k, cout, stride, groups in CASES:
        ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
        x = rng.normal(size=(n, c, h, w)).astype(dtype)
        kern = rng.normal(size=(k, k, c // groups, cout)).astype(dtype)
        dy = rng.normal(size=(n, cout, ho, wo)).astype(dtype)
        for op in ("forward", "grad_input", "grad_kernel"):
            timings, results = {}, {}
            for label, impl in (("numpy", _conv_numpy), ("ext", _conv_ext)):
                if impl is None:
                    continue
                chunks = min(threads, n) if impl is _conv_ext else 1
                args = (x, kern, dy, stride, groups, np.empty((n, cout, ho, wo), dtype), np.zeros_like(x),
                        np.zeros((chunks, k, k, c // groups, cout), dtype))
                results[label] = _run(impl, op, args, threads).copy()
                t0 = time.perf_counter()
                for _ in range(repeat):
                    _run(impl, op, args, threads)
                timings[label] = (time.perf_counter() - t0) / repeat
            row = {"case": name, "op": op, "numpy_ms": 1e3 * timings["numpy"]}
            if "ext" in timings:
                ref = results["numpy"].astype(np.float64)
                diff = np.max(np.abs(results["ext"] - ref)) / (np.max(np.abs(ref)) + 1e-30)
                row.update(ext_ms=1e3 * timings["ext"], speedup=timings["numpy"] / timings["ext"], rel_diff=float(diff))
            rows.append(row)
    return rows


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--dtype", default="float32", choices=["float32", "float64"])
    p.add_argument("--json", help="also write the rows as JSON here")
    args = p.parse_args()
    rows = bench(args.repeat, args.dtype)
    print(f"threads={worker_count()} dtype={args.dtype} ext={'yes' if _conv_ext else 'not built'}")
    print(f"{'case':<22} {'op':<12} {'numpy ms':>9} {'ext ms':>8} {'speedup':>8} {'rel diff':>9}")
    for r in rows:
        ext = f"{r['ext_ms']:>8.3f} {r['speedup']:>7.1f}x {r['rel_diff']:>9.1e}" if "ext_ms" in r else "       -"
        print(f"{r['case']:<22} {r['op']:<12} {r['numpy_ms']:>9.3f} {ext}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(rows, f, indent=1)


if __name__ == "__main__":
    main()
