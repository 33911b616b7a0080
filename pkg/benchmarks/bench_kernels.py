"""Benchmark the compiled conv kernels against the pure-numpy fallback.

Runs im2col3 and col2im3 on the layer geometries the default generator
actually uses, times both implementations in-process, and checks that their
outputs are bit-identical. Exits non-zero if any parity check fails.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats N] [--number N]
"""

import argparse
import sys
import timeit

import numpy as np

from feat._kernels import backend_name, numpy_backend

try:
    from feat._kernels import _convops
except ImportError:
    _convops = None

# (channels, resolution) pairs seen by a 32x32, 8-layer generator.
GEOMETRIES = [(128, 4), (112, 8), (96, 8), (80, 16), (64, 16), (48, 32), (32, 32)]


def _time(fn, repeats: int, number: int) -> float:
    return min(timeit.repeat(fn, repeat=repeats, number=number)) / number


def bench(repeats: int, number: int) -> bool:
    rng = np.random.default_rng(0)
    ok = True
    header = f"{'geometry':>12}  {'kernel':>7}  {'numpy':>10}  {'cython':>10}  {'speedup':>7}  parity"
    print(header)
    print("-" * len(header))
    for c, r in GEOMETRIES:
        x = rng.standard_normal((c, r, r))
        cols = numpy_backend.im2col3(x)
        cases = [
            ("im2col3", lambda impl, x=x: impl.im2col3(x)),
            ("col2im3", lambda impl, cols=cols, r=r: impl.col2im3(cols, r, r)),
        ]
        for name, run in cases:
            t_np = _time(lambda: run(numpy_backend), repeats, number)
            if _convops is None:
                print(f"{c:>4}x{r:>3}x{r:<3}  {name:>7}  {t_np * 1e6:>8.1f}us  {'-':>10}  {'-':>7}  -")
                continue
            t_cy = _time(lambda: run(_convops), repeats, number)
            same = run(numpy_backend).tobytes() == run(_convops).tobytes()
            ok &= same
            print(f"{c:>4}x{r:>3}x{r:<3}  {name:>7}  {t_np * 1e6:>8.1f}us  "
                  f"{t_cy * 1e6:>8.1f}us  {t_np / t_cy:>6.2f}x  {'ok' if same else 'MISMATCH'}")
    return ok


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5, help="timing repeats (best is kept)")
    parser.add_argument("--number", type=int, default=50, help="calls per repeat")
    args = parser.parse_args(argv)

    print(f"active backend: {backend_name()}")
    if _convops is None:
        print("compiled extension not available; timing the numpy fallback only")
    ok = bench(args.repeats, args.number)
    if not ok:
        print("PARITY FAILURE: backends disagree", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
