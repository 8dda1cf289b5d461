"""Compare the compiled kernels with their pure-Python fallbacks.

    python benchmarks/bench_kernels.py [--repeat N]

Prints median wall time per call for each backend and the speedup. Exits
non-zero if the two backends ever disagree on an input.
"""

from __future__ import annotations

import argparse
import statistics
import sys
import time

import numpy as np

from kesconv import _kernels_py, kernels


def timed(fn, args, repeat):
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples), out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if kernels.BACKEND != "cython":
        print("compiled extension not available; build it with `pip install -e . --no-build-isolation`")
        return 1
    rng = np.random.default_rng(0)
    cases = {
        "lcs_length 32x32 tokens": (rng.integers(0, 50, 32).tolist(), rng.integers(0, 50, 32).tolist()),
        "lcs_length 200x200 tokens": (rng.integers(0, 50, 200).tolist(), rng.integers(0, 50, 200).tolist()),
        "top1 1000x64 index": (rng.normal(size=(1000, 64)), rng.normal(size=64)),
        "top1 10000x64 index": (rng.normal(size=(10000, 64)), rng.normal(size=64)),
    }
    print(f"{'case':<28} {'python':>11} {'cython':>11} {'speedup':>8}")
    for name, case in cases.items():
        kernel = name.split()[0]
        slow, ref = timed(getattr(_kernels_py, kernel), case, args.repeat)
        fast, out = timed(getattr(kernels, kernel), case, args.repeat)
        if (out[0] if isinstance(out, tuple) else out) != (ref[0] if isinstance(ref, tuple) else ref):
            print(f"backends disagree on {name}: {out} vs {ref}")
            return 2
        print(f"{name:<28} {slow * 1e3:>9.3f}ms {fast * 1e3:>9.3f}ms {slow / fast:>7.0f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
